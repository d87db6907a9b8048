// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tapinn/adam.hpp"
#include "tapinn/autodiff/grad.hpp"
#include "tapinn/dataset.hpp"
#include "tapinn/losses.hpp"
#include "tapinn/neural.hpp"
#include "tapinn/params.hpp"
#include "tapinn/rng.hpp"

namespace tapinn {

enum class Method { TapinnAo, TapinnJoint, Parametric, HyperPinn, MultiOutput };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::Parametric, Method::MultiOutput, Method::HyperPinn, Method::TapinnAo,
                                     Method::TapinnJoint};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::TapinnAo: return "tapinn_ao";
    case Method::TapinnJoint: return "tapinn_joint";
    case Method::Parametric: return "parametric";
    case Method::HyperPinn: return "hyperpinn";
    case Method::MultiOutput: return "multi_output";
  }
  return "unknown";
}

inline Method method_from_string(std::string_view s) {
  for (Method m : all_methods()) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) +
                    "'; valid methods: tapinn_ao, tapinn_joint, parametric, hyperpinn, multi_output");
}

inline ModelKind model_kind(Method m) {
  switch (m) {
    case Method::TapinnAo:
    case Method::TapinnJoint: return ModelKind::Tapinn;
    case Method::Parametric: return ModelKind::Parametric;
    case Method::HyperPinn: return ModelKind::HyperPinn;
    case Method::MultiOutput: return ModelKind::MultiOutput;
  }
  return ModelKind::Tapinn;
}

struct TrainConfig {
  Method method = Method::TapinnAo;
  std::size_t epochs = 30;
  double lr = 1e-3;
  double alpha = 1.0;
  double beta = 0.1;
  double margin = 0.2;
  std::size_t k_joint = 5;
  std::size_t phase1_epochs = 5;
  std::size_t phase2_epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t collocation_points = 128;
  std::size_t data_points = 200;
  double divergence_threshold = 1e6;
  bool record_wall_time = false;
  ArchitectureDims dims{};

  void validate() const {
    if (phase1_epochs + phase2_epochs > epochs) throw ConfigError("phase1_epochs + phase2_epochs must not exceed epochs");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (k_joint < 1) throw ConfigError("k_joint must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (collocation_points < 1 || data_points < 1) throw ConfigError("collocation_points and data_points must be >= 1");
    if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  }
};

enum class Phase { I, II, Joint, Baseline };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::I: return "I";
    case Phase::II: return "II";
    case Phase::Joint: return "joint";
    case Phase::Baseline: return "baseline";
  }
  return "?";
}

inline Phase phase_from_string(std::string_view s) {
  if (s == "I") return Phase::I;
  if (s == "II") return Phase::II;
  if (s == "joint") return Phase::Joint;
  if (s == "baseline") return Phase::Baseline;
  throw IoError("unknown phase tag " + std::string(s));
}

/// Which update a batch receives. For alternating TAPINN: encoder-only metric
/// epochs, then generator-only epochs, then a window where every k-th batch is
/// a joint step and the rest continue generator-only.
inline Phase schedule_phase(std::size_t epoch, std::size_t batch_idx, const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::TapinnJoint: return Phase::Joint;
    case Method::Parametric:
    case Method::HyperPinn:
    case Method::MultiOutput: return Phase::Baseline;
    case Method::TapinnAo: break;
  }
  if (epoch < cfg.phase1_epochs) return Phase::I;
  if (epoch < cfg.phase1_epochs + cfg.phase2_epochs) return Phase::II;
  return batch_idx % cfg.k_joint == cfg.k_joint - 1 ? Phase::Joint : Phase::II;
}

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  Phase phase = Phase::Baseline;
  LossBreakdown loss{};
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

inline void write_steplog(const std::vector<StepLog>& logs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,epoch,phase,loss_data,loss_physics,loss_metric,loss_total,grad_norm,wall_ms\n";
  char buf[320];
  for (const StepLog& s : logs) {
    const int n = std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.step, s.epoch,
                                to_string(s.phase).c_str(), s.loss.data, s.loss.physics, s.loss.metric, s.loss.total,
                                s.grad_norm, s.wall_ms);
    out.write(buf, n);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<StepLog> read_steplog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<StepLog> logs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    for (;;) {
      const auto c = rest.find(',');
      f.push_back(rest.substr(0, c));
      if (c == std::string_view::npos) break;
      rest.remove_prefix(c + 1);
    }
    if (f.size() != 9) throw IoError("malformed steplog row in " + path.string());
    StepLog s;
    s.step = static_cast<std::size_t>(detail::parse_double(f[0]));
    s.epoch = static_cast<std::size_t>(detail::parse_double(f[1]));
    s.phase = phase_from_string(f[2]);
    s.loss.data = detail::parse_double(f[3]);
    s.loss.physics = detail::parse_double(f[4]);
    s.loss.metric = detail::parse_double(f[5]);
    s.loss.total = detail::parse_double(f[6]);
    s.grad_norm = detail::parse_double(f[7]);
    s.wall_ms = detail::parse_double(f[8]);
    logs.push_back(s);
  }
  return logs;
}

/// Shuffled batches of train indices; regimes are interleaved so every batch
/// mixes labels whenever the split has more than one regime.
inline std::vector<std::vector<std::size_t>> make_batches(const Dataset& ds, const std::vector<std::size_t>& members,
                                                          std::size_t batch_size, Rng& rng) {
  std::map<double, std::vector<std::size_t>> by_label;
  for (std::size_t i : members) by_label[ds.trajectories[i].f0].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [label, idx] : by_label) {
    rng.shuffle(idx);
    groups.push_back(idx);
  }
  std::vector<std::size_t> order;
  order.reserve(members.size());
  for (std::size_t k = 0; order.size() < members.size(); ++k) {
    for (const auto& g : groups) {
      if (k < g.size()) order.push_back(g[k]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

/// Sampled supervision and collocation inputs for one step.
struct BatchInputs {
  std::vector<ObservationWindow> windows;
  std::vector<double> labels;
  Mat cond_lambda;   // 1 x B forcing amplitudes
  Mat data_t;        // 1 x (B * data_points)
  Mat data_target;   // 2 x (B * data_points): x, v
  Mat col_t;         // 1 x (B * collocation_points)
  Mat col_forcing;   // 1 x (B * collocation_points)
  Index data_points = 0;
  Index col_points = 0;
};

inline BatchInputs sample_batch(const Dataset& ds, const std::vector<std::size_t>& items, const TrainConfig& cfg,
                                Rng& rng) {
  BatchInputs in;
  const auto b = static_cast<Index>(items.size());
  const std::size_t samples = ds.config.samples;
  const std::size_t stride = std::max<std::size_t>(1, samples / cfg.data_points);
  const std::size_t n_data = std::min(cfg.data_points, samples);
  const std::size_t offset = static_cast<std::size_t>(rng.below(stride));
  const double horizon = ds.config.horizon();
  in.data_points = static_cast<Index>(n_data);
  in.col_points = static_cast<Index>(cfg.collocation_points);
  in.cond_lambda.resize(1, b);
  in.data_t.resize(1, b * in.data_points);
  in.data_target.resize(2, b * in.data_points);
  in.col_t.resize(1, b * in.col_points);
  in.col_forcing.resize(1, b * in.col_points);
  for (Index j = 0; j < b; ++j) {
    const Trajectory& tr = ds.trajectories[items[static_cast<std::size_t>(j)]];
    in.windows.push_back(ObservationWindow::from_trajectory(tr, cfg.dims.window_len));
    in.labels.push_back(tr.f0);
    in.cond_lambda(0, j) = tr.f0;
    for (Index k = 0; k < in.data_points; ++k) {
      const std::size_t s = std::min(samples - 1, offset + stride * static_cast<std::size_t>(k));
      in.data_t(0, j * in.data_points + k) = tr.times[s];
      in.data_target(0, j * in.data_points + k) = tr.states[s].x;
      in.data_target(1, j * in.data_points + k) = tr.states[s].v;
    }
    for (Index k = 0; k < in.col_points; ++k) {
      const double t = rng.uniform(0.0, horizon);
      in.col_t(0, j * in.col_points + k) = t;
      in.col_forcing(0, j * in.col_points + k) = tr.f0 * std::cos(ds.config.duffing.omega * t);
    }
  }
  return in;
}

/// The loss of one step on a fresh tape, plus the breakdown of its terms.
struct StepObjective {
  ad::Var loss;
  LossBreakdown breakdown;
  bool degenerate_metric = false;
};

inline StepObjective build_objective(ad::Tape& tape, const std::vector<ad::Var>& p, const ModelParams& meta,
                                     const BatchInputs& in, Phase phase, const TrainConfig& cfg,
                                     const DuffingParams& duffing) {
  using namespace ad;
  const bool encoder_model = meta.has_encoder();
  const bool use_metric = phase == Phase::I || (phase == Phase::Joint && meta.kind == ModelKind::Tapinn);

  Var cond;
  if (encoder_model) {
    std::vector<Var> steps;
    for (const Mat& s : window_steps(in.windows)) steps.push_back(tape.constant(s));
    cond = encoder_forward(steps, encoder_weights(p));
  } else {
    cond = tape.constant(in.cond_lambda);
  }

  StepObjective out;
  double metric_value = 0.0;
  Var metric;
  if (use_metric) {
    auto tr = triplet_loss(cond, in.labels, cfg.margin);
    out.degenerate_metric = tr.degenerate;
    metric = tr.loss;
    metric_value = metric.scalar();
  }
  if (phase == Phase::I) {
    out.loss = metric;
    out.breakdown = total_loss(0.0, 0.0, metric_value, 0.0, 1.0);
    return out;
  }

  // data term
  const Var data_t = tape.constant(in.data_t);
  const Var pred = solution_forward(meta, p, cond, data_t, in.data_points);
  Var data;
  if (meta.kind == ModelKind::MultiOutput) {
    data = sobolev_loss(pred, tape.constant(in.data_target));
  } else {
    data = data_loss(pred, tape.constant(in.data_target.topRows(1)));
  }

  // physics term, always through autodiff time derivatives of the x output
  const Var col_t = tape.constant(in.col_t);
  Jet<Var> x = time_derivatives(
      [&](const Jet<Var>& t) { return solution_forward(meta, p, cond, t, in.col_points); }, col_t);
  if (meta.kind == ModelKind::MultiOutput) x = slice_rows(x, 0, 1);
  const Var physics = physics_residual(x, tape.constant(in.col_forcing), duffing);

  Var total = add(data, scale(physics, cfg.alpha));
  const bool with_metric = use_metric && !out.degenerate_metric;
  if (with_metric) total = add(total, scale(metric, cfg.beta));
  out.loss = total;
  out.breakdown = total_loss(data.scalar(), physics.scalar(), with_metric ? metric_value : 0.0, cfg.alpha,
                             with_metric ? cfg.beta : 0.0);
  return out;
}

inline std::vector<bool> phase_mask(const ModelParams& p, Phase phase) {
  switch (phase) {
    case Phase::I: return p.mask("encoder.");
    case Phase::II: return p.mask("generator.");
    case Phase::Joint:
    case Phase::Baseline: return std::vector<bool>(p.size(), true);
  }
  return {};
}

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> logs;
};

/// Called with a tag and the current parameters at phase boundaries and at the end.
using CheckpointHook = std::function<void(const std::string& tag, const ModelParams&)>;

/// Runs one training job. Batch order, data offsets and collocation points all
/// derive from cfg.seed, so identical inputs give identical logs and parameters.
inline TrainResult train_model(const TrainConfig& cfg_in, const Dataset& ds, const CheckpointHook& checkpoint = {}) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  cfg.dims.horizon = ds.config.horizon();
  const std::vector<std::size_t> train_idx = ds.indices(Split::Train);
  if (train_idx.size() < 2) throw ConfigError("training needs at least two train trajectories");

  TrainResult result;
  result.params = init_params(model_kind(cfg.method), cfg.seed, cfg.dims);
  ModelParams& params = result.params;
  AdamState adam = AdamState::for_params(params);
  Rng batch_rng(cfg.seed, 2);
  Rng sample_rng(cfg.seed, 3);
  const DuffingParams& duffing = ds.config.duffing;
  const auto clock_start = std::chrono::steady_clock::now();
  std::size_t step = 0;

  auto snapshot = [&](const std::string& tag) {
    if (checkpoint) checkpoint(tag, params);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == cfg.phase1_epochs) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "start_epoch%02zu", epoch);
      snapshot(tag);
    }
    const auto batches = make_batches(ds, train_idx, cfg.batch_size, batch_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Phase phase = schedule_phase(epoch, bi, cfg);
      const BatchInputs in = sample_batch(ds, batches[bi], cfg, sample_rng);
      const std::vector<bool> mask = phase_mask(params, phase);
      LossBreakdown breakdown;
      bool degenerate = false;
      ad::GradResult g;
      try {
        g = ad::grad(
            [&](ad::Tape& tape, const std::vector<ad::Var>& p) {
              StepObjective obj = build_objective(tape, p, params, in, phase, cfg, duffing);
              breakdown = obj.breakdown;
              degenerate = obj.degenerate_metric;
              return obj.loss;
            },
            params, mask);
      } catch (const NonFinite& e) {
        snapshot("last_good");
        throw Divergence(to_string(cfg.method) + " seed " + std::to_string(cfg.seed) + " diverged at step " +
                         std::to_string(step) + ": " + e.what());
      }
      if (degenerate && phase == Phase::I) continue;  // nothing to optimize
      if (!(breakdown.total <= cfg.divergence_threshold)) {
        snapshot("last_good");
        throw Divergence(to_string(cfg.method) + " seed " + std::to_string(cfg.seed) + " diverged at step " +
                         std::to_string(step) + ": total loss " + std::to_string(breakdown.total));
      }
      adam_step(params, g.grads, adam, cfg.lr, mask);
      StepLog log;
      log.step = step++;
      log.epoch = epoch;
      log.phase = phase;
      log.loss = breakdown;
      log.grad_norm = ad::global_norm(g.grads);
      if (cfg.record_wall_time) {
        log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - clock_start).count();
      }
      result.logs.push_back(log);
    }
    if (epoch + 1 == cfg.phase1_epochs + cfg.phase2_epochs) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "end_epoch%02zu", epoch);
      snapshot(tag);
    }
  }
  snapshot("final");
  return result;
}

struct TapinnResult {
  ModelParams encoder;
  ModelParams generator;
  ModelParams full;
  std::vector<StepLog> logs;
};

inline TapinnResult train_tapinn(const TrainConfig& cfg, const Dataset& ds, const CheckpointHook& checkpoint = {}) {
  if (cfg.method != Method::TapinnAo && cfg.method != Method::TapinnJoint) {
    throw ConfigError("train_tapinn: method must be tapinn_ao or tapinn_joint");
  }
  TrainResult r = train_model(cfg, ds, checkpoint);
  return {r.params.subset("encoder."), r.params.subset("generator."), r.params, std::move(r.logs)};
}

inline TrainResult train_baseline(const TrainConfig& cfg, const Dataset& ds, const CheckpointHook& checkpoint = {}) {
  if (cfg.method == Method::TapinnAo || cfg.method == Method::TapinnJoint) {
    throw ConfigError("train_baseline: method must be parametric, hyperpinn or multi_output");
  }
  return train_model(cfg, ds, checkpoint);
}

/// Mean of loss_total over each epoch's steps.
inline std::vector<double> epoch_mean_loss(const std::vector<StepLog>& logs) {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const StepLog& s : logs) {
    acc[s.epoch].first += s.loss.total;
    acc[s.epoch].second += 1;
  }
  std::vector<double> out;
  for (auto& [e, v] : acc) out.push_back(v.first / static_cast<double>(v.second));
  return out;
}

}  // namespace tapinn
