// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tapinn/autodiff/jet.hpp"
#include "tapinn/duffing.hpp"
#include "tapinn/errors.hpp"

namespace tapinn {

using ad::Index;
using ad::Mat;
using ad::Jet;

/// Mean squared difference. Works on plain matrices and tape vars alike.
template <class T>
T data_loss(const T& predictions, const T& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw LengthMismatch("data_loss: prediction and target lengths differ");
  }
  if (predictions.rows() * predictions.cols() == 0) throw LengthMismatch("data_loss: empty input");
  return ad::mean(ad::square(ad::sub(predictions, targets)));
}

inline double data_loss(const std::vector<double>& predictions, const std::vector<double>& targets) {
  if (predictions.size() != targets.size()) throw LengthMismatch("data_loss: prediction and target lengths differ");
  if (predictions.empty()) throw LengthMismatch("data_loss: empty input");
  const Mat p = Eigen::Map<const Eigen::RowVectorXd>(predictions.data(), static_cast<Index>(predictions.size()));
  const Mat t = Eigen::Map<const Eigen::RowVectorXd>(targets.data(), static_cast<Index>(targets.size()));
  return data_loss(p, t)(0, 0);
}

/// Forcing term f0_i cos(omega t_i) for a row of times with per-column amplitudes.
inline Mat forcing_row(const Mat& times, const Mat& amplitudes, double omega) {
  return amplitudes.cwiseProduct((times * omega).array().cos().matrix());
}

/// Pointwise ODE residual x'' + delta x' + alpha x + beta x^3 - f0 cos(omega t).
template <class T>
T ode_residual(const Jet<T>& x, const T& forcing, const DuffingParams& p) {
  using namespace ad;
  T r = add(x.d2, scale(x.d1, p.delta));
  r = add(r, scale(x.v, p.alpha));
  r = add(r, scale(powi(x.v, 3), p.beta));
  return sub(r, forcing);
}

/// Mean squared ODE residual from a solution's (x, x', x'') at collocation points.
template <class T>
T physics_residual(const Jet<T>& x, const T& forcing, const DuffingParams& p) {
  return ad::mean(ad::square(ode_residual(x, forcing, p)));
}

/// Mean squared residual of a callable solution g: Jet<Mat> (1 x N) -> Jet<Mat> (1 x N)
/// at the given times, for forcing amplitude f0.
template <class G>
double physics_residual(G&& g, const std::vector<double>& t_points, double f0, const DuffingParams& p) {
  if (t_points.empty()) throw LengthMismatch("physics_residual: no collocation points");
  const Mat t = Eigen::Map<const Eigen::RowVectorXd>(t_points.data(), static_cast<Index>(t_points.size()));
  const Jet<Mat> x = g(ad::seed_like(t));
  const double r = physics_residual(x, forcing_row(t, Mat::Constant(1, t.cols(), f0), p.omega), p)(0, 0);
  if (!std::isfinite(r)) throw NonFinite("physics_residual: non-finite residual");
  return r;
}

/// Every (anchor, positive, negative) index triple with label(a) == label(p), a != p,
/// label(n) != label(a).
struct Triplet {
  std::size_t anchor, positive, negative;
};

inline std::vector<Triplet> enumerate_triplets(const std::vector<double>& labels) {
  std::vector<Triplet> out;
  const std::size_t n = labels.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[q] != labels[a]) out.push_back({a, p, q});
      }
    }
  }
  return out;
}

template <class T>
struct TripletResult {
  T loss;
  std::size_t triplets = 0;
  /// No valid triplet (single-label batch); loss is 0.
  bool degenerate = false;
};

/// Mean hinge max(0, d(a,p) - d(a,n) + margin) over all in-batch triplets, with
/// Euclidean distances between columns of the embedding matrix.
template <class T>
TripletResult<T> triplet_loss(const T& embeddings, const std::vector<double>& labels, double margin) {
  const auto n = static_cast<std::size_t>(embeddings.cols());
  if (labels.size() != n) throw LengthMismatch("triplet_loss: one label per embedding required");
  if (n < 2) throw LengthMismatch("triplet_loss: need at least two embeddings");
  if (!(margin > 0.0)) throw ConfigError("triplet_loss: margin must be positive");

  const auto triplets = enumerate_triplets(labels);
  if (triplets.empty()) return {ad::constant_like(embeddings, Mat::Zero(1, 1)), 0, true};

  // unordered pair (i < j) -> column in the distance row
  std::vector<Index> first, second;
  std::vector<Index> pair_of(n * n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      pair_of[i * n + j] = pair_of[j * n + i] = static_cast<Index>(first.size());
      first.push_back(static_cast<Index>(i));
      second.push_back(static_cast<Index>(j));
    }
  }
  using namespace ad;
  const T diff = sub(gather_cols(embeddings, first), gather_cols(embeddings, second));
  const T dist = sqrt(col_sums(square(diff)));
  std::vector<Index> ap, an;
  ap.reserve(triplets.size());
  an.reserve(triplets.size());
  for (const Triplet& t : triplets) {
    ap.push_back(pair_of[t.anchor * n + t.positive]);
    an.push_back(pair_of[t.anchor * n + t.negative]);
  }
  const T hinge = relu(shift(sub(gather_cols(dist, ap), gather_cols(dist, an)), margin));
  return {mean(hinge), triplets.size(), false};
}

/// H1 supervision: MSE on x plus MSE on x', equally weighted.
/// outputs rows are (x_hat, x_dot_hat); targets rows are (x, v).
template <class T>
T sobolev_loss(const T& outputs, const T& targets) {
  if (outputs.rows() != 2 || targets.rows() != 2 || outputs.cols() != targets.cols()) {
    throw LengthMismatch("sobolev_loss: expected matching 2 x N inputs");
  }
  using namespace ad;
  return add(data_loss(slice_rows(outputs, 0, 1), slice_rows(targets, 0, 1)),
             data_loss(slice_rows(outputs, 1, 1), slice_rows(targets, 1, 1)));
}

struct LossBreakdown {
  double data = 0.0;
  double physics = 0.0;
  double metric = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

/// total = data + alpha * physics + beta * metric.
inline LossBreakdown total_loss(double data, double physics, double metric, double alpha, double beta) {
  if (!std::isfinite(data) || !std::isfinite(physics) || !std::isfinite(metric) || !std::isfinite(alpha) ||
      !std::isfinite(beta)) {
    throw NonFinite("total_loss: non-finite input");
  }
  LossBreakdown b{data, physics, metric, 0.0, alpha, beta};
  b.total = data + alpha * physics + beta * metric;
  return b;
}

}  // namespace tapinn
