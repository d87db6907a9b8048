// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tapinn/autodiff/jet.hpp"
#include "tapinn/autodiff/tape.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/params.hpp"

namespace tapinn::ad {

/// One gradient array per parameter array, same order and shapes.
using GradientVector = std::vector<Mat>;

struct GradResult {
  double loss = 0.0;
  GradientVector grads;
};

inline double global_norm(const GradientVector& g) {
  double s = 0.0;
  for (const Mat& a : g) s += a.squaredNorm();
  return std::sqrt(s);
}

/// Reverse-mode gradient of a scalar loss built on a fresh tape.
///
/// `loss_fn(Tape&, const std::vector<Var>&)` receives one Var per parameter
/// array and returns a 1x1 Var. Arrays outside `mask` enter the tape as
/// constants: nothing is propagated into them and their gradient is zero.
template <class LossFn>
GradResult grad(LossFn&& loss_fn, const std::vector<Mat>& arrays, const std::vector<bool>& mask = {}) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const bool trainable = mask.empty() || mask[i];
    vars.push_back(trainable ? tape.variable(arrays[i]) : tape.constant(arrays[i]));
  }
  Var loss = loss_fn(tape, vars);
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeMismatch("grad: loss must be 1x1");
  GradResult out;
  out.loss = loss.scalar();
  if (!std::isfinite(out.loss)) throw NonFinite("grad: loss is not finite");
  tape.backward(loss);
  out.grads.reserve(arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    out.grads.push_back(tape.grad(vars[i]));
    if (!out.grads.back().allFinite()) throw NonFinite("grad: non-finite gradient entry in array " + std::to_string(i));
  }
  return out;
}

template <class LossFn>
GradResult grad(LossFn&& loss_fn, const ModelParams& params, const std::vector<bool>& mask = {}) {
  return grad(std::forward<LossFn>(loss_fn), params.arrays, mask);
}

/// Value, first and second derivative of g at t, with t seeded as (t, 1, 0).
/// When T is a tape Var the whole evaluation lands on that tape.
template <class T, class G>
Jet<T> time_derivatives(G&& g, const T& t) {
  return g(seed_like(t));
}

}  // namespace tapinn::ad
