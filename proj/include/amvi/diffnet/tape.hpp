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
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "amvi/core/error.hpp"

namespace amvi::diffnet {

class Tape;

/// Handle to a scalar node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  double value() const;
};

/// Linearized reverse-mode tape.
///
/// Every node stores its value and the local partial derivatives with respect
/// to its parents, so arbitrary n-ary operations (dense layers, forward-model
/// Jacobians, fused Monte Carlo sums) are a single node. Backward is one sweep in
/// reverse recording order.
class Tape {
 public:
  Tape() { offsets_.push_back(0); }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t edge_count() const noexcept { return parents_.size(); }

  void clear() {
    values_.clear();
    parents_.clear();
    partials_.clear();
    offsets_.assign(1, 0);
  }

  void reserve(std::size_t nodes, std::size_t edges) {
    values_.reserve(nodes);
    offsets_.reserve(nodes + 1);
    parents_.reserve(edges);
    partials_.reserve(edges);
  }

  double value(std::uint32_t id) const { return values_[id]; }

  Var leaf(double v) { return push(v); }

  /// Records `values` as consecutive leaves; returns their handles.
  std::vector<Var> leaves(std::span<const double> values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(leaf(v));
    return out;
  }

  Var push(double v) {
    values_.push_back(v);
    offsets_.push_back(static_cast<std::uint32_t>(parents_.size()));
    return {this, static_cast<std::uint32_t>(values_.size() - 1)};
  }

  Var push(double v, Var a, double da) {
    add_edge(a, da);
    return push(v);
  }

  Var push(double v, Var a, double da, Var b, double db) {
    add_edge(a, da);
    add_edge(b, db);
    return push(v);
  }

  /// Starts a node with many parents: call add_edge() repeatedly, then push(v).
  void add_edge(Var parent, double partial) {
    parents_.push_back(parent.id);
    partials_.push_back(partial);
  }

  bool owns(Var v) const noexcept { return v.tape == this && v.id < values_.size(); }

  /// Adjoints d(loss)/d(node) for every node recorded before `loss`.
  std::vector<double> backward(Var loss) const {
    if (!owns(loss) || offsets_.back() != parents_.size())
      throw ContractError("backward: loss must be a completed scalar node on this tape");
    std::vector<double> adj(loss.id + 1, 0.0);
    adj[loss.id] = 1.0;
    for (std::int64_t i = loss.id; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const auto lo = offsets_[static_cast<std::size_t>(i)];
      const auto hi = offsets_[static_cast<std::size_t>(i) + 1];
      for (auto e = lo; e < hi; ++e) adj[parents_[e]] += a * partials_[e];
    }
    return adj;
  }

 private:
  std::vector<double> values_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
};

inline double Var::value() const { return tape->value(id); }

/// Gradient of `loss` with respect to the contiguous leaves `wrt`.
inline std::vector<double> gradient(const Tape& tape, Var loss, std::span<const Var> wrt) {
  const auto adj = tape.backward(loss);
  std::vector<double> g(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i)
    if (wrt[i].id < adj.size()) g[i] = adj[wrt[i].id];
  return g;
}

// Arithmetic. A Var and a double never share a tape entry for the constant.

inline Var operator+(Var a, Var b) { return a.tape->push(a.value() + b.value(), a, 1.0, b, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape->push(a.value() - b.value(), a, 1.0, b, -1.0); }
inline Var operator*(Var a, Var b) {
  return a.tape->push(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(Var a, Var b) {
  const double bv = b.value();
  return a.tape->push(a.value() / bv, a, 1.0 / bv, b, -a.value() / (bv * bv));
}
inline Var operator-(Var a) { return a.tape->push(-a.value(), a, -1.0); }

inline Var operator+(Var a, double c) { return a.tape->push(a.value() + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a.tape->push(a.value() - c, a, 1.0); }
inline Var operator-(double c, Var a) { return a.tape->push(c - a.value(), a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape->push(a.value() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a.tape->push(a.value() / c, a, 1.0 / c); }
inline Var operator/(double c, Var a) {
  const double av = a.value();
  return a.tape->push(c / av, a, -c / (av * av));
}

inline Var& operator+=(Var& a, Var b) { return a = a + b; }
inline Var& operator-=(Var& a, Var b) { return a = a - b; }
inline Var& operator*=(Var& a, double c) { return a = a * c; }

inline Var exp(Var a) {
  const double e = std::exp(a.value());
  return a.tape->push(e, a, e);
}
inline Var log(Var a) { return a.tape->push(std::log(a.value()), a, 1.0 / a.value()); }
inline Var sqrt(Var a) {
  const double s = std::sqrt(a.value());
  return a.tape->push(s, a, 0.5 / s);
}
inline Var square(Var a) { return a.tape->push(a.value() * a.value(), a, 2.0 * a.value()); }
inline Var relu(Var a) { return a.tape->push(a.value() > 0.0 ? a.value() : 0.0, a, a.value() > 0.0 ? 1.0 : 0.0); }

/// max(a, floor) with the gradient passing through only when a > floor.
inline Var clamp_below(Var a, double floor) {
  return a.value() > floor ? a : a.tape->push(floor, a, 0.0);
}

/// Copy of `a` with no parents: the value is kept, the gradient path is cut.
inline Var detach(Var a) { return a.tape->push(a.value()); }

inline double square(double a) { return a * a; }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }
inline double clamp_below(double a, double floor) { return a > floor ? a : floor; }
inline double detach(double a) { return a; }

inline double value_of(double a) { return a; }
inline double value_of(Var a) { return a.value(); }

/// Sum of a non-empty span as a single node.
inline Var sum(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("sum: empty input");
  Tape* t = xs.front().tape;
  double s = 0.0;
  for (auto x : xs) {
    s += x.value();
    t->add_edge(x, 1.0);
  }
  return t->push(s);
}

inline double sum(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

template <class S>
S mean(std::span<const S> xs) {
  return sum(xs) / static_cast<double>(xs.size());
}

}  // namespace amvi::diffnet
