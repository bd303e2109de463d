// maskemb/error.hpp

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

#ifndef MASKEMB_ERROR_HPP_
#define MASKEMB_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maskemb {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree. `axis()` names the offending axis.
class ShapeError : public Error {
 public:
  ShapeError(const std::string &op, const std::string &axis,
             std::size_t expected, std::size_t got)
      : Error(op + ": shape mismatch on axis '" + axis + "' (expected " +
              std::to_string(expected) + ", got " + std::to_string(got) + ")"),
        axis_(axis) {}
  ShapeError(const std::string &op, const std::string &message)
      : Error(op + ": " + message) {}

  const std::string &axis() const { return axis_; }

 private:
  std::string axis_;
};

/// A target-masked statistic was requested over zero selected frames.
class EmptyTargetMask : public Error {
 public:
  explicit EmptyTargetMask(const std::string &where)
      : Error(where + ": target mask selects no frames") {}
};

/// Misuse of the gradient tape (non-scalar loss, double backward, ...).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskemb

#endif  // MASKEMB_ERROR_HPP_
