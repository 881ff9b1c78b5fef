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

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "amvi/core/error.hpp"

namespace amvi {

/// Row-major set of `size()` samples, each of dimension `dim()`.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(std::size_t n, std::size_t dim) : dim_(dim), data_(n * dim, 0.0) {}
  SampleSet(std::size_t dim, std::vector<double> data)
      : dim_(dim), data_(std::move(data)) {
    if (dim_ == 0 || data_.size() % dim_ != 0)
      throw ShapeError("SampleSet: data length is not a multiple of dim");
  }

  std::size_t size() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return size() == 0; }

  std::span<double> operator[](std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> operator[](std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }

  void push_back(std::span<const double> x) {
    if (dim_ == 0) dim_ = x.size();
    if (x.size() != dim_) throw ShapeError("SampleSet::push_back: dimension mismatch");
    data_.insert(data_.end(), x.begin(), x.end());
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  std::vector<double> mean() const {
    std::vector<double> m(dim_, 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < dim_; ++j) m[j] += (*this)[i][j];
    for (auto& v : m) v /= static_cast<double>(size());
    return m;
  }

  /// Per-component variance with 1/n normalization.
  std::vector<double> variance() const {
    const auto m = mean();
    std::vector<double> v(dim_, 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = (*this)[i][j] - m[j];
        v[j] += d * d;
      }
    for (auto& x : v) x /= static_cast<double>(size());
    return v;
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> c(size());
    for (std::size_t i = 0; i < size(); ++i) c[i] = (*this)[i][j];
    return c;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

}  // namespace amvi
