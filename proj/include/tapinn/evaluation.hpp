// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tapinn/dataset.hpp"
#include "tapinn/losses.hpp"
#include "tapinn/neural.hpp"
#include "tapinn/params.hpp"
#include "tapinn/rng.hpp"
#include "tapinn/training.hpp"

namespace tapinn {

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  double physics_residual = 0.0;
  double data_mse = 0.0;
  std::size_t param_count = 0;
  double grad_norm_mean = 0.0;
  double grad_norm_variance = 0.0;
  std::optional<double> probe_mse;
  double probe_ridge = 0.0;
  std::size_t n_collocation = 0;
  std::size_t test_trajectories = 0;
  double runtime_s = 0.0;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["physics_residual"] = r.physics_residual;
  j["data_mse"] = r.data_mse;
  j["param_count"] = r.param_count;
  j["grad_norm_mean"] = r.grad_norm_mean;
  j["grad_norm_variance"] = r.grad_norm_variance;
  j["probe_mse"] = r.probe_mse ? nlohmann::json(*r.probe_mse) : nlohmann::json(nullptr);
  j["probe_ridge"] = r.probe_ridge;
  j["n_collocation"] = r.n_collocation;
  j["test_trajectories"] = r.test_trajectories;
  j["runtime_s"] = r.runtime_s;
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.method = j.at("method");
  r.seed = j.at("seed");
  r.physics_residual = j.at("physics_residual");
  r.data_mse = j.at("data_mse");
  r.param_count = j.at("param_count");
  r.grad_norm_mean = j.at("grad_norm_mean");
  r.grad_norm_variance = j.at("grad_norm_variance");
  if (!j.at("probe_mse").is_null()) r.probe_mse = j.at("probe_mse").get<double>();
  r.probe_ridge = j.value("probe_ridge", 0.0);
  r.n_collocation = j.value("n_collocation", std::size_t{0});
  r.test_trajectories = j.value("test_trajectories", std::size_t{0});
  r.runtime_s = j.value("runtime_s", 0.0);
  return r;
}

/// Value-only x(t) (and derivatives when X is a Jet) for one trajectory's conditioning.
template <class X>
X predict_x(const ModelParams& model, const Mat& cond, const X& t, Index points) {
  const std::vector<Mat> p = plain_view(model);
  X out = solution_forward(model, p, cond, t, points);
  if (model.kind == ModelKind::MultiOutput) return ad::slice_rows(out, 0, 1);
  return out;
}

/// Mean over test trajectories of the mean squared ODE residual at n_c
/// uniform times in [0, horizon], drawn per trajectory from eval_seed.
inline double eval_physics_residual(const ModelParams& model, const Dataset& ds, std::size_t n_c,
                                    std::uint64_t eval_seed) {
  if (n_c < 1) throw ConfigError("eval_physics_residual: n_c must be >= 1");
  const auto test = ds.indices(Split::Test);
  if (test.empty()) throw ConfigError("eval_physics_residual: empty test split");
  const double horizon = ds.config.horizon();
  const std::vector<Mat> p = plain_view(model);
  double acc = 0.0;
  for (std::size_t i : test) {
    const Trajectory& tr = ds.trajectories[i];
    const Mat cond = conditioning(model, {ObservationWindow::from_trajectory(tr, model.dims.window_len)});
    Rng rng(eval_seed, static_cast<std::uint64_t>(tr.traj_id));
    Mat t(1, static_cast<Index>(n_c));
    for (Index k = 0; k < t.cols(); ++k) t(0, k) = rng.uniform(0.0, horizon);
    Jet<Mat> x = solution_forward(model, p, cond, ad::seed_like(t), t.cols());
    if (model.kind == ModelKind::MultiOutput) x = ad::slice_rows(x, 0, 1);
    const Mat forcing = forcing_row(t, Mat::Constant(1, t.cols(), tr.f0), ds.config.duffing.omega);
    const double r = physics_residual(x, forcing, ds.config.duffing)(0, 0);
    if (!std::isfinite(r)) throw NonFinite("eval_physics_residual: non-finite residual on trajectory " +
                                           std::to_string(tr.traj_id));
    acc += r;
  }
  return acc / static_cast<double>(test.size());
}

/// MSE of x-hat against x over every stored sample of every test trajectory.
inline double eval_data_mse(const ModelParams& model, const Dataset& ds) {
  const auto test = ds.indices(Split::Test);
  if (test.empty()) throw ConfigError("eval_data_mse: empty test split");
  const std::vector<Mat> p = plain_view(model);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i : test) {
    const Trajectory& tr = ds.trajectories[i];
    const Mat cond = conditioning(model, {ObservationWindow::from_trajectory(tr, model.dims.window_len)});
    const Mat t = Eigen::Map<const Eigen::RowVectorXd>(tr.times.data(), static_cast<Index>(tr.size()));
    Mat x = solution_forward(model, p, cond, t, t.cols());
    for (Index k = 0; k < t.cols(); ++k) {
      const double e = x(0, k) - tr.states[static_cast<std::size_t>(k)].x;
      acc += e * e;
    }
    count += tr.size();
  }
  return acc / static_cast<double>(count);
}

struct GradientStats {
  double mean = 0.0;
  double variance = 0.0;
  std::size_t count = 0;
};

/// Records entering the gradient comparison: everything but encoder-only metric steps.
inline bool in_comparison_window(const StepLog& s) { return s.phase != Phase::I; }

inline GradientStats gradient_stats(const std::vector<double>& norms) {
  if (norms.size() < 2) throw TooFewRecords("gradient_stats: need at least two records");
  GradientStats g;
  g.count = norms.size();
  for (double v : norms) g.mean += v;
  g.mean /= static_cast<double>(norms.size());
  for (double v : norms) g.variance += (v - g.mean) * (v - g.mean);
  g.variance /= static_cast<double>(norms.size() - 1);
  return g;
}

inline GradientStats gradient_stats(const std::vector<StepLog>& logs) {
  std::vector<double> norms;
  for (const StepLog& s : logs) {
    if (in_comparison_window(s)) norms.push_back(s.grad_norm);
  }
  return gradient_stats(norms);
}

struct ProbeResult {
  double mse = 0.0;
  double ridge = 0.0;
  Eigen::VectorXd weights;  // intercept first
};

/// Least-squares regression of labels on [1, z] (columns of embeddings), fit
/// and scored on the same samples. The ridge only conditions the normal equations.
inline ProbeResult linear_probe(const Mat& embeddings, const std::vector<double>& labels, double ridge = 1e-8) {
  const Index n = embeddings.cols();
  const Index d = embeddings.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw LengthMismatch("linear_probe: one label per embedding");
  if (n < d + 1) throw TooFewRecords("linear_probe: need at least latent_dim + 1 samples");
  Mat design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = embeddings.transpose();
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(labels.data(), n);
  Mat normal = design.transpose() * design;
  normal.diagonal().array() += ridge;
  Eigen::LDLT<Mat> solver(normal);
  if (solver.info() != Eigen::Success || !solver.isPositive()) throw Singular("linear_probe: normal equations singular");
  ProbeResult r;
  r.ridge = ridge;
  r.weights = solver.solve(design.transpose() * y);
  if (!r.weights.allFinite()) throw Singular("linear_probe: non-finite solution");
  r.mse = (design * r.weights - y).squaredNorm() / static_cast<double>(n);
  return r;
}

/// Latent codes of every trajectory in a split, one column each.
inline Mat split_embeddings(const ModelParams& model, const Dataset& ds, Split which, std::vector<std::size_t>* order = nullptr) {
  const auto idx = ds.indices(which);
  std::vector<ObservationWindow> windows;
  for (std::size_t i : idx) windows.push_back(ObservationWindow::from_trajectory(ds.trajectories[i], model.dims.window_len));
  if (order) *order = idx;
  if (windows.empty()) return Mat(model.dims.latent_dim, 0);
  return encode(model, windows);
}

/// CSV traj_id,f0,z_0..z_{d-1}, one row per trajectory of the split.
inline void export_embeddings(const ModelParams& model, const Dataset& ds, Split which,
                              const std::filesystem::path& path) {
  std::vector<std::size_t> idx;
  const Mat z = split_embeddings(model, ds, which, &idx);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "traj_id,f0";
  for (Index k = 0; k < z.rows(); ++k) out << ",z_" << k;
  out << '\n';
  char buf[40];
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const Trajectory& tr = ds.trajectories[idx[c]];
    out << tr.traj_id;
    std::snprintf(buf, sizeof buf, ",%.17g", tr.f0);
    out << buf;
    for (Index k = 0; k < z.rows(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.17g", z(k, static_cast<Index>(c)));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

/// Mean inter-regime distance over mean intra-regime distance between embeddings.
inline double separation_ratio(const Mat& z, const std::vector<double>& labels) {
  double inter = 0.0, intra = 0.0;
  std::size_t n_inter = 0, n_intra = 0;
  for (Index i = 0; i < z.cols(); ++i) {
    for (Index j = i + 1; j < z.cols(); ++j) {
      const double d = (z.col(i) - z.col(j)).norm();
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0 || intra == 0.0) throw TooFewRecords("separation_ratio: need two regimes with pairs");
  return (inter / static_cast<double>(n_inter)) / (intra / static_cast<double>(n_intra));
}

inline double label_variance(const std::vector<double>& labels) {
  double m = 0.0;
  for (double v : labels) m += v;
  m /= static_cast<double>(labels.size());
  double s = 0.0;
  for (double v : labels) s += (v - m) * (v - m);
  return s / static_cast<double>(labels.size());
}

}  // namespace tapinn
