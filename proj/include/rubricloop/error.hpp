// Copyright 2026 The rubricloop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RUBRICLOOP_ERROR_HPP_
#define RUBRICLOOP_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace rubricloop {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (dimension < 2, nonpositive counts, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Arguments that violate an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Numerical failure: non-finite loss, divergence, non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible serialized artifacts.
class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void Require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline void RequireConfig(bool condition, const std::string& message) {
  if (!condition) throw ConfigError(message);
}

}  // namespace detail
}  // namespace rubricloop

#endif  // RUBRICLOOP_ERROR_HPP_
