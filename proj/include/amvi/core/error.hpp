/* Copyright 2026 The amvi Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace amvi {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or missing configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// API misuse (e.g. differentiating a node that is not on the tape).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradient or loss during optimization.
class OptimizerError : public Error {
 public:
  OptimizerError(const std::string& what, std::uint64_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  std::uint64_t iteration() const noexcept { return iteration_; }

 private:
  std::uint64_t iteration_;
};

/// Matrix not symmetric positive definite, or similar.
class LinalgError : public Error {
 public:
  using Error::Error;
};

/// Finite-element factorization or residual failure.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Operation not available for this problem (e.g. analytic reference of a
/// nonlinear model).
class UnsupportedProblemError : public Error {
 public:
  using Error::Error;
};

/// Reference sample set absent from the cache while computation is disabled.
class CacheMissError : public Error {
 public:
  using Error::Error;
};

}  // namespace amvi
