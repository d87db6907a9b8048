// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tapinn/autodiff/grad.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/params.hpp"

namespace tapinn {

/// Adam moments per parameter array. Each array keeps its own step counter,
/// so arrays frozen for a while resume with their own bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::vector<std::uint64_t> steps;

  static AdamState for_params(const ModelParams& p) {
    AdamState s;
    for (const Mat& a : p.arrays) {
      s.m.push_back(Mat::Zero(a.rows(), a.cols()));
      s.v.push_back(Mat::Zero(a.rows(), a.cols()));
      s.steps.push_back(0);
    }
    return s;
  }
};

/// Bias-corrected Adam update on the arrays selected by mask (empty mask = all).
/// Unselected arrays and their moments are left untouched.
inline void adam_step(ModelParams& params, const ad::GradientVector& g, AdamState& state, double lr,
                      const std::vector<bool>& mask = {}) {
  if (g.size() != params.size() || state.m.size() != params.size() || (!mask.empty() && mask.size() != params.size())) {
    throw ShapeMismatch("adam_step: params, gradients, state and mask must align");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    Mat& p = params.arrays[i];
    if (g[i].rows() != p.rows() || g[i].cols() != p.cols()) throw ShapeMismatch("adam_step: gradient shape differs");
    if (!g[i].allFinite()) throw NonFinite("adam_step: non-finite gradient in " + params.names[i]);
    const auto t = static_cast<double>(++state.steps[i]);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i].cwiseAbs2();
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    p.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
    if (!p.allFinite()) throw NonFinite("adam_step: parameters became non-finite in " + params.names[i]);
  }
}

}  // namespace tapinn
