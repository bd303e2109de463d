// maskemb/json_util.hpp

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

// Strict JSON section reader: every key must be consumed, so typos in
// configuration files are errors instead of silent defaults.

#ifndef MASKEMB_JSON_UTIL_HPP_
#define MASKEMB_JSON_UTIL_HPP_

#include <set>
#include <string>

#include "json.hpp"
#include "maskemb/error.hpp"

namespace maskemb {

using Json = nlohmann::ordered_json;

class StrictReader {
 public:
  StrictReader(const Json &j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char *key, T &out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json *child(const char *key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const Json &j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace maskemb

#endif  // MASKEMB_JSON_UTIL_HPP_
