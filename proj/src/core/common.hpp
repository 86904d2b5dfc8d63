/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef KARULA_CORE_COMMON_HPP_
#define KARULA_CORE_COMMON_HPP_

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace karula {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Stacked personalized parameters, row i holds client i's model.
using ModelStack = Matrix;

/// Base class of every error raised by the core library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input does not satisfy an operation's shape or value contract.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Configuration file or override could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace karula

#endif  // KARULA_CORE_COMMON_HPP_
