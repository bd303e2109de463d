// src/encoders.cpp

// Copyright 2026  The maskemb Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "maskemb/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace maskemb {

std::string family_name(Family f) {
  return f == Family::kEcapaMini ? "ecapa-mini" : "campp-mini";
}

Family parse_family(const std::string &name) {
  if (name == "ecapa-mini") return Family::kEcapaMini;
  if (name == "campp-mini") return Family::kCamppMini;
  throw ConfigError("unknown encoder family '" + name + "'");
}

ModelConfig ModelConfig::preset(const std::string &name, Family family) {
  ModelConfig c;
  c.family = family;
  if (name == "baseline") return c;
  c.guide_input = c.guide_pooling = true;
  if (name == "guided") return c;
  c.guide_se_or_cam = c.guide_bn = true;
  if (name == "proposed") return c;
  if (name == "no-guided-bn") {
    c.guide_bn = false;
    return c;
  }
  if (name == "no-guided-se") {
    c.guide_se_or_cam = false;
    return c;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

std::size_t ModelConfig::kernel(std::size_t block) const {
  return pointwise_only ? 1 : kernels.at(block);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string &m) { throw ConfigError("model: " + m); };
  if (input_dim == 0) fail("input_dim must be positive");
  if (num_blocks == 0) fail("need at least one block");
  if (channels < 4 || channels % 2 != 0) fail("channels must be even and >= 4");
  if (kernels.size() != num_blocks || dilations.size() != num_blocks)
    fail("kernels and dilations need one entry per block");
  for (std::size_t k : kernels)
    if (k == 0 || k % 2 == 0) fail("kernel sizes must be odd");
  for (std::size_t d : dilations)
    if (d == 0) fail("dilations must be positive");
  if (stem_kernel == 0 || stem_kernel % 2 == 0) fail("stem_kernel must be odd");
  if (embedding_dim == 0) fail("embedding_dim must be positive");
  if (segment_length == 0) fail("segment_length must be positive");
  const std::size_t se_channels =
      family == Family::kEcapaMini ? channels : channels / 2;
  if (se_reduction == 0 || se_channels < se_reduction ||
      se_channels % se_reduction != 0)
    fail("SE/CAM channels (" + std::to_string(se_channels) +
         ") must be a positive multiple of se_reduction");
}

Json to_json(const ModelConfig &c) {
  return Json{{"family", family_name(c.family)},
              {"input_dim", c.input_dim},
              {"channels", c.channels},
              {"num_blocks", c.num_blocks},
              {"stem_kernel", c.stem_kernel},
              {"kernels", c.kernels},
              {"dilations", c.dilations},
              {"embedding_dim", c.embedding_dim},
              {"se_reduction", c.se_reduction},
              {"segment_length", c.segment_length},
              {"guide_input", c.guide_input},
              {"guide_pooling", c.guide_pooling},
              {"guide_se_or_cam", c.guide_se_or_cam},
              {"guide_bn", c.guide_bn},
              {"pointwise_only", c.pointwise_only}};
}

ModelConfig model_config_from_json(const Json &j, ModelConfig c) {
  StrictReader r(j, "model");
  std::string family = family_name(c.family);
  r.get("family", family);
  c.family = parse_family(family);
  r.get("input_dim", c.input_dim);
  r.get("channels", c.channels);
  r.get("num_blocks", c.num_blocks);
  r.get("stem_kernel", c.stem_kernel);
  r.get("kernels", c.kernels);
  r.get("dilations", c.dilations);
  r.get("embedding_dim", c.embedding_dim);
  r.get("se_reduction", c.se_reduction);
  r.get("segment_length", c.segment_length);
  r.get("guide_input", c.guide_input);
  r.get("guide_pooling", c.guide_pooling);
  r.get("guide_se_or_cam", c.guide_se_or_cam);
  r.get("guide_bn", c.guide_bn);
  r.get("pointwise_only", c.pointwise_only);
  r.finish();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

Conv make_conv(Rng &rng, std::size_t co, std::size_t ci, std::size_t k,
               std::size_t dilation, bool bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(ci * k));
  Conv c;
  c.w = uniform_tensor(rng, {co, ci, k}, bound);
  if (bias) c.b = uniform_tensor(rng, {co}, bound);
  c.dilation = dilation;
  return c;
}

BNParams make_bn(std::size_t channels) {
  BNParams p = BNParams::init(channels);
  p.init_running_stats();
  return p;
}

Tensor apply(const Conv &c, const Tensor &x) {
  return conv1d(x, c.w, c.dilation, c.b);
}

Tensor bn(const Tensor &x, BNParams &p, MaskSpan masks, BNMode mode) {
  return batchnorm_forward(x, p, masks, mode).y;
}

void collect_conv(const std::string &name, const Conv &c,
                  std::vector<NamedTensor> &out) {
  out.emplace_back(name + ".w", c.w);
  if (c.b.defined()) out.emplace_back(name + ".b", c.b);
}

// Activity rows [B, 2, T] appended to the features.
Tensor activity_rows(const std::vector<ActivityMask> &masks, std::size_t T) {
  Tensor q({masks.size(), 2, T});
  auto v = q.mutable_values();
  for (std::size_t b = 0; b < masks.size(); ++b)
    for (std::size_t t = 0; t < T; ++t) {
      v[(b * 2) * T + t] = masks[b].target[t];
      v[(b * 2 + 1) * T + t] = masks[b].nontarget[t];
    }
  return q;
}

}  // namespace

Model build_model(const ModelConfig &config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.seed = seed;
  Rng rng(seed);
  const std::size_t D = config.channels, H = D / 2;
  const std::size_t in = config.input_dim + (config.guide_input ? 2 : 0);
  const bool ecapa = config.family == Family::kEcapaMini;

  // Convolutions feeding a batch norm directly carry no bias; the
  // normalization would cancel it.
  m.stem = make_conv(rng, D, in, config.stem(), 1, ecapa);
  m.stem_bn = make_bn(D);
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    const std::size_t k = config.kernel(i), dil = config.dilations[i];
    if (ecapa) {
      EcapaBlock b;
      b.tdnn1 = make_conv(rng, D, D, 1, 1, true);
      b.bn1 = make_bn(D);
      b.res2 = make_conv(rng, H, H, k, dil, true);
      b.bn_res2 = make_bn(H);
      b.tdnn2 = make_conv(rng, D, D, 1, 1, true);
      b.bn2 = make_bn(D);
      b.se = SEParams::init(D, config.se_reduction, rng);
      m.ecapa.push_back(std::move(b));
    } else {
      CamBlock b;
      b.bn_in = make_bn(D);
      b.squeeze = make_conv(rng, H, D, 1, 1, false);
      b.bn_mid = make_bn(H);
      b.local = make_conv(rng, H, H, k, dil, false);
      b.cam = SEParams::init(H, config.se_reduction, rng);
      b.bn_transit = make_bn(D + H);
      b.transit = make_conv(rng, D, D + H, 1, 1, false);
      m.campp.push_back(std::move(b));
    }
  }
  if (!ecapa) m.final_bn = make_bn(D);
  m.pool = PoolParams::init(D, config.attention_dim(), rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * D));
  m.out_w = uniform_tensor(rng, {config.embedding_dim, 2 * D}, bound);
  m.out_b = uniform_tensor(rng, {config.embedding_dim}, bound);
  return m;
}

Tensor Model::forward(const Tensor &features,
                      const std::vector<ActivityMask> *masks, BNMode mode) {
  if (!features.defined() || features.rank() != 3)
    throw ShapeError("Model::forward", "features must be [B, F, T]");
  if (features.dim(1) != config.input_dim)
    throw ShapeError("Model::forward", "mel bins", config.input_dim, features.dim(1));
  const std::size_t B = features.dim(0), T = features.dim(2);
  const std::size_t D = config.channels, H = D / 2;

  std::vector<FrameMask> targets;
  if (config.any_guided()) {
    if (masks == nullptr)
      throw Error("Model::forward: guided configuration requires activity masks");
    if (masks->size() != B) throw ShapeError("Model::forward", "masks", B, masks->size());
    for (const ActivityMask &m : *masks) {
      if (m.target.size() != T || m.nontarget.size() != T)
        throw ShapeError("Model::forward", "mask frames", T, m.target.size());
      if (m.empty_target()) throw EmptyTargetMask("Model::forward");
      targets.push_back(m.target);
    }
  }
  const MaskSpan none;
  const MaskSpan se_masks = config.guide_se_or_cam ? MaskSpan(targets) : none;
  const MaskSpan bn_masks = config.guide_bn ? MaskSpan(targets) : none;
  const MaskSpan pool_masks = config.guide_pooling ? MaskSpan(targets) : none;

  Tensor x = features;
  if (config.guide_input) x = concat({features, activity_rows(*masks, T)}, 1);

  Tensor h;
  if (config.family == Family::kEcapaMini) {
    h = bn(relu(apply(stem, x)), stem_bn, bn_masks, mode);
    for (EcapaBlock &b : ecapa) {
      Tensor a = bn(relu(apply(b.tdnn1, h)), b.bn1, bn_masks, mode);
      Tensor y2 = bn(relu(apply(b.res2, slice(a, 1, H, D))), b.bn_res2, bn_masks, mode);
      a = concat({slice(a, 1, 0, H), y2}, 1);
      a = bn(relu(apply(b.tdnn2, a)), b.bn2, bn_masks, mode);
      a = se_block_forward(a, b.se, se_masks).y;
      h = add(a, h);
    }
  } else {
    h = relu(bn(apply(stem, x), stem_bn, none, mode));
    const SegmentPlan plan = SegmentPlan::fixed(T, config.segment_length);
    for (CamBlock &b : campp) {
      Tensor a = relu(bn(h, b.bn_in, bn_masks, mode));
      a = relu(bn(apply(b.squeeze, a), b.bn_mid, bn_masks, mode));
      const Conv &local = b.local;
      a = campp_mask_forward(a, b.cam, [&local](const Tensor &t) { return apply(local, t); },
                             plan, se_masks)
              .y;
      h = concat({h, a}, 1);
      h = apply(b.transit, relu(bn(h, b.bn_transit, none, mode)));
    }
    h = relu(bn(h, final_bn, none, mode));
  }
  return linear(attentive_stats_pool(h, pool, pool_masks), out_w, out_b);
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  collect_conv("stem", stem, out);
  stem_bn.collect("stem_bn", out);
  for (std::size_t i = 0; i < ecapa.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const EcapaBlock &b = ecapa[i];
    collect_conv(p + ".tdnn1", b.tdnn1, out);
    b.bn1.collect(p + ".bn1", out);
    collect_conv(p + ".res2", b.res2, out);
    b.bn_res2.collect(p + ".bn_res2", out);
    collect_conv(p + ".tdnn2", b.tdnn2, out);
    b.bn2.collect(p + ".bn2", out);
    b.se.collect(p + ".se", out);
  }
  for (std::size_t i = 0; i < campp.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const CamBlock &b = campp[i];
    b.bn_in.collect(p + ".bn_in", out);
    collect_conv(p + ".squeeze", b.squeeze, out);
    b.bn_mid.collect(p + ".bn_mid", out);
    collect_conv(p + ".local", b.local, out);
    b.cam.collect(p + ".cam", out);
    b.bn_transit.collect(p + ".bn_transit", out);
    collect_conv(p + ".transit", b.transit, out);
  }
  if (!campp.empty()) final_bn.collect("final_bn", out);
  pool.collect("pool", out);
  out.emplace_back("out.w", out_w);
  out.emplace_back("out.b", out_b);
  return out;
}

std::vector<std::pair<std::string, BNParams *>> Model::batchnorms() {
  std::vector<std::pair<std::string, BNParams *>> out{{"stem_bn", &stem_bn}};
  for (std::size_t i = 0; i < ecapa.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    out.emplace_back(p + ".bn1", &ecapa[i].bn1);
    out.emplace_back(p + ".bn_res2", &ecapa[i].bn_res2);
    out.emplace_back(p + ".bn2", &ecapa[i].bn2);
  }
  for (std::size_t i = 0; i < campp.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    out.emplace_back(p + ".bn_in", &campp[i].bn_in);
    out.emplace_back(p + ".bn_mid", &campp[i].bn_mid);
    out.emplace_back(p + ".bn_transit", &campp[i].bn_transit);
  }
  if (!campp.empty()) out.emplace_back("final_bn", &final_bn);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto &[name, t] : parameters()) n += t.numel();
  return n;
}

Tensor stack_features(const std::vector<const Tensor *> &items) {
  if (items.empty()) throw ShapeError("stack_features", "no items");
  const Shape &ref = items.front()->shape();
  std::vector<double> v;
  v.reserve(items.size() * shape_numel(ref));
  for (const Tensor *t : items) {
    if (t->shape() != ref)
      throw ShapeError("stack_features", "items differ: " + shape_string(ref) +
                                             " vs " + shape_string(t->shape()));
    v.insert(v.end(), t->values().begin(), t->values().end());
  }
  return Tensor({items.size(), ref[0], ref[1]}, std::move(v));
}

Tensor extract_embedding(Model &model, const FeatureSequence &features,
                         const ActivityMask *mask) {
  NoGradScope no_grad;
  const Tensor &f = features.frames;
  if (f.rank() != 2) throw ShapeError("extract_embedding", "features must be [F, T]");
  Tensor x = reshape(f, {1, f.dim(0), f.dim(1)});
  std::vector<ActivityMask> masks;
  if (mask != nullptr) masks.push_back(*mask);
  if (model.config.any_guided() && mask == nullptr)
    throw Error("extract_embedding: guided configuration requires an activity mask");
  Tensor e = model.forward(x, mask ? &masks : nullptr, BNMode::kInfer);
  return reshape(e, {e.dim(1)});
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'S', 'K', 'E', 'M', 'B', 'C', 'K'};

std::vector<std::pair<std::string, std::vector<double> *>> state_tensors(
    Model &model, std::vector<NamedTensor> &params) {
  std::vector<std::pair<std::string, std::vector<double> *>> out;
  for (auto &[name, t] : params) out.emplace_back(name, &t.impl()->data);
  for (auto &[name, bn] : model.batchnorms()) {
    out.emplace_back(name + ".running_mean", &bn->running_mean);
    out.emplace_back(name + ".running_var", &bn->running_var);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string &path, Model &model,
                     const std::string &extra_json) {
  std::vector<NamedTensor> params = model.parameters();
  auto state = state_tensors(model, params);
  Json table = Json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    Json entry{{"name", state[i].first}, {"offset", offset},
               {"size", state[i].second->size()}};
    if (i < params.size()) entry["shape"] = params[i].second.shape();
    table.push_back(entry);
    offset += state[i].second->size();
  }
  bool initialized = true;
  for (auto &[name, bn] : model.batchnorms()) initialized &= bn->running_initialized;
  Json header{{"config", to_json(model.config)},
              {"seed", model.seed},
              {"running_stats_initialized", initialized},
              {"tensors", table},
              {"extra", Json::parse(extra_json)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(kMagic, 8);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char *>(&version), 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char *>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (auto &[name, data] : state)
    out.write(reinterpret_cast<const char *>(data->data()),
              static_cast<std::streamsize>(data->size() * sizeof(double)));
  if (!out) throw FormatError(path + ": write failed");
}

Model load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError(path + ": not a maskemb checkpoint");
  in.read(reinterpret_cast<char *>(&version), 4);
  if (version != kCheckpointVersion)
    throw FormatError(path + ": checkpoint version " + std::to_string(version) +
                      ", this build reads version " +
                      std::to_string(kCheckpointVersion));
  in.read(reinterpret_cast<char *>(&len), 8);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw FormatError(path + ": truncated header");
  Json header;
  try {
    header = Json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
  Model model = build_model(model_config_from_json(header.at("config")),
                            header.at("seed").get<std::uint64_t>());
  std::vector<NamedTensor> params = model.parameters();
  auto state = state_tensors(model, params);
  const Json &table = header.at("tensors");
  if (table.size() != state.size())
    throw FormatError(path + ": tensor table does not match the configuration");
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (table[i].at("name").get<std::string>() != state[i].first ||
        table[i].at("size").get<std::size_t>() != state[i].second->size())
      throw FormatError(path + ": tensor '" + state[i].first + "' mismatch");
    if (!in.read(reinterpret_cast<char *>(state[i].second->data()),
                 static_cast<std::streamsize>(state[i].second->size() * sizeof(double))))
      throw FormatError(path + ": truncated tensor data");
  }
  const bool initialized = header.value("running_stats_initialized", true);
  for (auto &[name, bn] : model.batchnorms()) bn->running_initialized = initialized;
  return model;
}

}  // namespace maskemb
