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
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amvi/core/error.hpp"
#include "amvi/core/rng.hpp"
#include "amvi/diffnet/tape.hpp"

namespace amvi::diffnet {

enum class Activation { ReLU };

/// Fully connected feedforward architecture.
struct NetworkSpec {
  std::size_t input_dim = 1;
  std::size_t output_dim = 2;
  std::size_t hidden_layers = 1;
  std::size_t hidden_width = 20;
  Activation activation = Activation::ReLU;

  void validate() const {
    if (input_dim == 0) throw ConfigError("NetworkSpec: input_dim must be positive");
    if (output_dim == 0) throw ConfigError("NetworkSpec: output_dim must be positive");
    if (hidden_layers > 0 && hidden_width == 0)
      throw ConfigError("NetworkSpec: hidden_width must be positive");
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Location of one dense layer inside the flat parameter vector. Weights are
/// row-major `rows x cols` (out x in), followed by `rows` biases.
struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

inline std::vector<LayerShape> layer_shapes(const NetworkSpec& spec) {
  spec.validate();
  std::vector<LayerShape> shapes;
  std::size_t in = spec.input_dim;
  std::size_t offset = 0;
  for (std::size_t l = 0; l <= spec.hidden_layers; ++l) {
    const std::size_t out = l == spec.hidden_layers ? spec.output_dim : spec.hidden_width;
    LayerShape s{out, in, offset, offset + out * in};
    offset = s.bias_offset + out;
    shapes.push_back(s);
    in = out;
  }
  return shapes;
}

inline std::size_t parameter_count(const NetworkSpec& spec) {
  const auto shapes = layer_shapes(spec);
  return shapes.back().bias_offset + shapes.back().rows;
}

/// Weights and biases of a network as one flat vector with shape metadata.
struct NetworkParams {
  NetworkSpec spec;
  std::vector<LayerShape> layers;
  std::vector<double> values;

  NetworkParams() = default;
  explicit NetworkParams(const NetworkSpec& s)
      : spec(s), layers(layer_shapes(s)), values(parameter_count(s), 0.0) {}

  std::size_t size() const noexcept { return values.size(); }

  double& weight(std::size_t layer, std::size_t row, std::size_t col) {
    const auto& L = layers.at(layer);
    return values[L.weight_offset + row * L.cols + col];
  }
  double& bias(std::size_t layer, std::size_t row) {
    return values[layers.at(layer).bias_offset + row];
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
inline NetworkParams he_initialize(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkParams p(spec);
  Rng rng(seed);
  for (const auto& L : p.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(L.cols));
    for (std::size_t k = 0; k < L.rows * L.cols; ++k)
      p.values[L.weight_offset + k] = sd * standard_normal(rng);
  }
  return p;
}

/// Network output for one input vector.
inline std::vector<double> forward(const NetworkParams& params, std::span<const double> input) {
  if (input.size() != params.spec.input_dim)
    throw ShapeError("forward: input length " + std::to_string(input.size()) +
                     " != input_dim " + std::to_string(params.spec.input_dim));
  std::vector<double> x(input.begin(), input.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    const double* W = params.values.data() + L.weight_offset;
    const double* b = params.values.data() + L.bias_offset;
    next.assign(L.rows, 0.0);
    for (std::size_t r = 0; r < L.rows; ++r) {
      double acc = b[r];
      for (std::size_t c = 0; c < L.cols; ++c) acc += W[r * L.cols + c] * x[c];
      next[r] = l + 1 < params.layers.size() ? relu(acc) : acc;
    }
    x.swap(next);
  }
  return x;
}

/// Records the forward pass on `tape`. `leaves` are the tape handles of
/// `params.values` (same order), so gradients land on the parameters.
inline std::vector<Var> forward(Tape& tape, const NetworkParams& params,
                                std::span<const Var> leaves, std::span<const double> input) {
  if (input.size() != params.spec.input_dim)
    throw ShapeError("forward: input length " + std::to_string(input.size()) +
                     " != input_dim " + std::to_string(params.spec.input_dim));
  if (leaves.size() != params.values.size())
    throw ShapeError("forward: leaf count does not match parameter count");

  std::vector<double> xv(input.begin(), input.end());
  std::vector<Var> x;  // empty for the first layer: the input is constant
  std::vector<Var> next;
  std::vector<double> next_v;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    const bool last = l + 1 == params.layers.size();
    next.clear();
    next_v.assign(L.rows, 0.0);
    for (std::size_t r = 0; r < L.rows; ++r) {
      double acc = params.values[L.bias_offset + r];
      for (std::size_t c = 0; c < L.cols; ++c) {
        const std::size_t w = L.weight_offset + r * L.cols + c;
        acc += params.values[w] * xv[c];
        if (xv[c] != 0.0) tape.add_edge(leaves[w], xv[c]);
        if (!x.empty()) tape.add_edge(x[c], params.values[w]);
      }
      tape.add_edge(leaves[L.bias_offset + r], 1.0);
      Var pre = tape.push(acc);
      if (!last) pre = relu(pre);
      next.push_back(pre);
      next_v[r] = pre.value();
    }
    x.swap(next);
    xv.swap(next_v);
  }
  return x;
}

}  // namespace amvi::diffnet
