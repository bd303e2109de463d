// maskemb/encoders.hpp

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

// Scaled-down ECAPA-TDNN and CAM++ speaker-embedding extractors with
// switchable activity guidance.

#ifndef MASKEMB_ENCODERS_HPP_
#define MASKEMB_ENCODERS_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "maskemb/features.hpp"
#include "maskemb/guided_layers.hpp"
#include "maskemb/json_util.hpp"

namespace maskemb {

enum class Family { kEcapaMini, kCamppMini };

std::string family_name(Family f);
Family parse_family(const std::string &name);

struct ModelConfig {
  Family family = Family::kEcapaMini;
  std::size_t input_dim = 80;  // mel bins
  std::size_t channels = 64;
  std::size_t num_blocks = 3;
  std::size_t stem_kernel = 3;
  std::vector<std::size_t> kernels{3, 3, 3};  // per block
  std::vector<std::size_t> dilations{2, 3, 4};
  std::size_t embedding_dim = 32;
  std::size_t se_reduction = 4;
  std::size_t segment_length = 10;  // CAM++ local statistics
  bool guide_input = false;
  bool guide_pooling = false;
  bool guide_se_or_cam = false;
  bool guide_bn = false;
  bool pointwise_only = false;

  /// "baseline", "guided", "proposed", "no-guided-bn", "no-guided-se".
  static ModelConfig preset(const std::string &name,
                            Family family = Family::kEcapaMini);

  bool any_guided() const {
    return guide_input || guide_pooling || guide_se_or_cam || guide_bn;
  }
  std::size_t kernel(std::size_t block) const;
  std::size_t stem() const { return pointwise_only ? 1 : stem_kernel; }
  std::size_t attention_dim() const { return channels / 2; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

Json to_json(const ModelConfig &config);
/// Starts from `base` and overrides the keys present; unknown keys throw.
ModelConfig model_config_from_json(const Json &j, ModelConfig base = {});

struct Conv {
  Tensor w;  // [Co, Ci, K]
  Tensor b;  // [Co] or undefined
  std::size_t dilation = 1;
};

struct EcapaBlock {
  Conv tdnn1;
  BNParams bn1;
  Conv res2;  // second channel group only
  BNParams bn_res2;
  Conv tdnn2;
  BNParams bn2;
  SEParams se;
};

struct CamBlock {
  BNParams bn_in;    // dense layer, guided
  Conv squeeze;      // D -> D/2, pointwise
  BNParams bn_mid;   // dense layer, guided
  Conv local;        // CAM transform g, D/2 -> D/2
  SEParams cam;
  BNParams bn_transit;  // standard
  Conv transit;         // 3D/2 -> D, pointwise
};

class Model {
 public:
  ModelConfig config;
  std::uint64_t seed = 0;

  Conv stem;
  BNParams stem_bn;
  std::vector<EcapaBlock> ecapa;
  std::vector<CamBlock> campp;
  BNParams final_bn;  // campp only
  PoolParams pool;
  Tensor out_w;  // [E, 2D]
  Tensor out_b;  // [E]

  /// Batched forward: features [B, F, T] -> embeddings [B, E]. `masks` holds
  /// one activity mask per item and is required when any guide flag is set;
  /// it is ignored otherwise.
  Tensor forward(const Tensor &features, const std::vector<ActivityMask> *masks,
                 BNMode mode);

  /// Trainable tensors in a fixed order with stable names.
  std::vector<NamedTensor> parameters() const;
  /// Every batch-norm layer in a fixed order with stable names.
  std::vector<std::pair<std::string, BNParams *>> batchnorms();
  std::size_t parameter_count() const;
};

/// Deterministic initialization from the seed. BN running statistics are
/// initialized to (0, 1) so the model can run inference immediately.
Model build_model(const ModelConfig &config, std::uint64_t seed);

/// Inference-mode embedding [E] of one utterance. `mask` may be null when no
/// guide flag is set; with flags set it must select at least one frame.
Tensor extract_embedding(Model &model, const FeatureSequence &features,
                         const ActivityMask *mask);

/// Stacks [F, T] features of equal length into [B, F, T].
Tensor stack_features(const std::vector<const Tensor *> &items);

constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, JSON header (config, seed, tensor
/// table, `extra`), raw little-endian doubles.
void save_checkpoint(const std::string &path, Model &model,
                     const std::string &extra_json = "{}");
Model load_checkpoint(const std::string &path);

}  // namespace maskemb

#endif  // MASKEMB_ENCODERS_HPP_
