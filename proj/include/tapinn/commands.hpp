// SPDX-License-Identifier: Apache-2.0
#pragma once

// Subcommand implementations behind the tapinn binary. Each returns a process
// exit code: 0 ok, 2 usage/config/io error, 3 numerical divergence.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tapinn/config.hpp"
#include "tapinn/dataset.hpp"
#include "tapinn/duffing.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/evaluation.hpp"
#include "tapinn/params.hpp"
#include "tapinn/training.hpp"

namespace tapinn {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitDivergence = 3 };

struct Console {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline std::string thousands(std::size_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace detail

/// Runs fn, mapping library exceptions onto exit codes.
template <class Fn>
int guarded(Console& io, Fn&& fn) {
  try {
    return fn();
  } catch (const Divergence& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NonFinite& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    io.err << "error: malformed JSON: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

// ---------------------------------------------------------------- generate

struct RegimeCheck {
  double f0 = 0.0;
  RegimeDescriptor descriptor;
};

/// Long run from a fixed initial condition per regime, classified after warm-up.
inline std::vector<RegimeCheck> check_regimes(const ExperimentConfig& cfg) {
  std::vector<RegimeCheck> out;
  const auto& d = cfg.dataset;
  for (double f0 : d.regimes) {
    const DuffingParams p = d.duffing.with_forcing(f0);
    const double period = p.forcing_period();
    const auto steps = static_cast<std::size_t>(std::ceil(static_cast<double>(cfg.regime_check.periods) * period / d.dt));
    const Trajectory tr = simulate_trajectory(f0, cfg.regime_check.x0, cfg.regime_check.v0, steps, d.dt, d.duffing);
    RegimeOracleOptions opt;
    opt.warmup = static_cast<double>(cfg.regime_check.warmup_periods) * period;
    out.push_back({f0, regime_oracle(tr, p, opt)});
  }
  return out;
}

/// The sweep must start periodic at the smallest forcing and end chaotic at the largest.
inline bool regimes_separated(const std::vector<RegimeCheck>& checks) {
  if (checks.size() < 2) return false;
  auto lo = std::min_element(checks.begin(), checks.end(), [](auto& a, auto& b) { return a.f0 < b.f0; });
  auto hi = std::max_element(checks.begin(), checks.end(), [](auto& a, auto& b) { return a.f0 < b.f0; });
  return !lo->descriptor.chaotic && hi->descriptor.chaotic;
}

inline int cmd_generate(const fs::path& config_path, std::uint64_t seed, const fs::path& out_dir, Console io = {}) {
  return guarded(io, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto checks = check_regimes(cfg);
    for (const auto& c : checks) {
      io.out << "regime f0=" << detail::format_double(c.f0) << ": " << c.descriptor.label() << " ("
             << c.descriptor.distinct_points << " distinct section points of " << c.descriptor.section_samples << ")\n";
    }
    if (!regimes_separated(checks)) {
      io.err << "WARNING: regime separation failed: expected periodic dynamics at the smallest f0 and chaos at the "
                "largest under the configured Duffing constants\n";
    }
    const Dataset ds = generate_dataset(cfg.dataset, seed);
    write_dataset(ds, out_dir);
    io.out << "wrote " << ds.trajectories.size() << " trajectories to " << out_dir.string() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------- train

struct TrainRequest {
  fs::path config;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  fs::path out;
  fs::path data;  // overrides dataset.path when non-empty
  std::size_t jobs = 1;
};

inline fs::path run_dir_for(const TrainRequest& req, Method m, std::uint64_t seed) {
  if (req.methods.size() == 1 && req.seeds.size() == 1) return req.out;
  return req.out / to_string(m) / ("seed" + std::to_string(seed));
}

/// Trains one (method, seed) run into dir: config.cfg, steplog.csv, run.json and checkpoints/.
inline void run_training(ExperimentConfig cfg, const Dataset& ds, const fs::path& data_dir, Method method,
                         std::uint64_t seed, const fs::path& dir) {
  cfg.train.method = method;
  cfg.train.seed = seed;
  cfg.dataset_path = fs::absolute(data_dir).lexically_normal().string();
  fs::create_directories(dir / "checkpoints");
  detail::write_text(dir / "config.cfg", dump_config(cfg));
  const bool encoder = model_kind(method) == ModelKind::Tapinn || model_kind(method) == ModelKind::MultiOutput;
  std::vector<std::string> tags;
  auto hook = [&](const std::string& tag, const ModelParams& p) {
    save_checkpoint(p, dir / "checkpoints" / (tag + "_model"));
    if (encoder) save_checkpoint(p.subset("encoder."), dir / "checkpoints" / (tag + "_encoder"));
    tags.push_back(tag);
  };
  const TrainResult r = train_model(cfg.train, ds, hook);
  write_steplog(r.logs, dir / "steplog.csv");
  nlohmann::json run;
  run["method"] = to_string(method);
  run["seed"] = seed;
  run["model_kind"] = to_string(r.params.kind);
  run["param_count"] = param_count(r.params);
  run["steps"] = r.logs.size();
  run["dataset"] = cfg.dataset_path;
  run["checkpoints"] = tags;
  detail::write_text(dir / "run.json", run.dump(2) + "\n");
}

inline int cmd_train(const TrainRequest& req, Console io = {}) {
  return guarded(io, [&] {
    if (req.methods.empty()) throw ConfigError("no method given");
    if (req.seeds.empty()) throw ConfigError("no seed given");
    const ExperimentConfig cfg = load_config(req.config);
    cfg.train.validate();
    const fs::path data_dir = req.data.empty() ? fs::path(cfg.dataset_path) : req.data;
    const Dataset ds = read_dataset(data_dir);

    struct Job {
      Method method;
      std::uint64_t seed;
      fs::path dir;
    };
    std::vector<Job> jobs;
    for (Method m : req.methods) {
      for (std::uint64_t s : req.seeds) jobs.push_back({m, s, run_dir_for(req, m, s)});
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::vector<std::string> failures;
    int code = kExitOk;
    auto worker = [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        const Job& job = jobs[i];
        const auto t0 = std::chrono::steady_clock::now();
        int rc = kExitOk;
        std::string msg;
        try {
          run_training(cfg, ds, data_dir, job.method, job.seed, job.dir);
        } catch (const Divergence& e) {
          rc = kExitDivergence;
          msg = e.what();
        } catch (const Error& e) {
          rc = kExitUsage;
          msg = to_string(job.method) + " seed " + std::to_string(job.seed) + ": " + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::lock_guard lock(mu);
        if (rc == kExitOk) {
          io.out << "trained " << to_string(job.method) << " seed " << job.seed << " -> " << job.dir.string() << " ("
                 << detail::fixed(secs, 1) << " s)\n";
        } else {
          io.err << "error: " << msg << '\n';
          code = std::max(code, rc);
        }
      }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(req.jobs, jobs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return code;
  });
}

// ---------------------------------------------------------------- evaluate

inline EvalReport evaluate_run(const fs::path& run_dir) {
  const fs::path run_json = run_dir / "run.json";
  if (!fs::exists(run_json)) throw IoError("not a run directory (no run.json): " + run_dir.string());
  const nlohmann::json run = nlohmann::json::parse(detail::read_text(run_json));
  std::istringstream cfg_text(detail::read_text(run_dir / "config.cfg"));
  const ExperimentConfig cfg = parse_config(cfg_text, (run_dir / "config.cfg").string());
  const ModelParams model = load_checkpoint(run_dir / "checkpoints" / "final_model");
  const Dataset ds = read_dataset(cfg.dataset_path);
  const auto logs = read_steplog(run_dir / "steplog.csv");

  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.method = run.at("method");
  r.seed = run.at("seed");
  r.param_count = param_count(model);
  r.physics_residual = eval_physics_residual(model, ds, cfg.eval.n_collocation, cfg.eval.seed);
  r.data_mse = eval_data_mse(model, ds);
  const GradientStats g = gradient_stats(logs);
  r.grad_norm_mean = g.mean;
  r.grad_norm_variance = g.variance;
  r.n_collocation = cfg.eval.n_collocation;
  r.test_trajectories = ds.indices(Split::Test).size();
  r.probe_ridge = cfg.eval.probe_ridge;
  if (model.has_encoder()) {
    std::vector<std::size_t> idx;
    const Mat z = split_embeddings(model, ds, Split::Test, &idx);
    std::vector<double> labels;
    for (std::size_t i : idx) labels.push_back(ds.trajectories[i].f0);
    try {
      r.probe_mse = linear_probe(z, labels, cfg.eval.probe_ridge).mse;
    } catch (const TooFewRecords&) {
      // too few test embeddings for the probe; reported as null
    }
    export_embeddings(model, ds, Split::Test, run_dir / "embeddings_test.csv");
  }
  if (cfg.eval.record_runtime) {
    r.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  detail::write_text(run_dir / "eval.json", to_json(r).dump(2) + "\n");
  return r;
}

inline int cmd_evaluate(const fs::path& run_dir, Console io = {}) {
  return guarded(io, [&] {
    const EvalReport r = evaluate_run(run_dir);
    io.out << r.method << " seed " << r.seed << ": physics_residual " << detail::sci(r.physics_residual)
           << ", data_mse " << detail::sci(r.data_mse) << ", params " << r.param_count;
    if (r.method != "parametric" && r.method != "hyperpinn") io.out << ", probe_mse " << (r.probe_mse ? detail::sci(*r.probe_mse) : "n/a");
    io.out << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------- compare

inline std::vector<fs::path> find_runs(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "run.json") out.push_back(e.path().parent_path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw TooFewRecords("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct MethodSummary {
  Method method{};
  std::size_t runs = 0;
  std::size_t param_count = 0;
  double physics_residual = 0.0;
  double data_mse = 0.0;
  double grad_norm_mean = 0.0;
  double grad_norm_variance = 0.0;
  std::optional<double> probe_mse;
};

struct Comparison {
  std::vector<EvalReport> reports;
  std::vector<MethodSummary> methods;  // fixed table order, present methods only

  const MethodSummary* find(Method m) const {
    for (const auto& s : methods) {
      if (s.method == m) return &s;
    }
    return nullptr;
  }
};

inline std::string display_name(Method m) {
  switch (m) {
    case Method::Parametric: return "Parametric Baseline";
    case Method::MultiOutput: return "Multi-Output";
    case Method::HyperPinn: return "HyperPINN";
    case Method::TapinnAo: return "Ours (AO)";
    case Method::TapinnJoint: return "Joint Training (ablation)";
  }
  return "?";
}

inline Comparison summarize(std::vector<EvalReport> reports) {
  Comparison c;
  std::sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    return std::tie(a.method, a.seed) < std::tie(b.method, b.seed);
  });
  c.reports = reports;
  for (Method m : all_methods()) {
    std::vector<double> res, mse, gm, gv, probe;
    MethodSummary s;
    s.method = m;
    for (const auto& r : reports) {
      if (r.method != to_string(m)) continue;
      ++s.runs;
      s.param_count = r.param_count;
      res.push_back(r.physics_residual);
      mse.push_back(r.data_mse);
      gm.push_back(r.grad_norm_mean);
      gv.push_back(r.grad_norm_variance);
      if (r.probe_mse) probe.push_back(*r.probe_mse);
    }
    if (s.runs == 0) continue;
    s.physics_residual = median(res);
    s.data_mse = median(mse);
    s.grad_norm_mean = median(gm);
    s.grad_norm_variance = median(gv);
    if (!probe.empty()) s.probe_mse = median(probe);
    c.methods.push_back(s);
  }
  return c;
}

inline std::string render_table(const Comparison& c) {
  std::ostringstream t;
  char line[160];
  std::snprintf(line, sizeof line, "%-27s %13s %9s %10s %5s\n", "Method", "Physics Res.", "Params", "Data MSE", "Runs");
  t << line << std::string(68, '-') << '\n';
  for (const auto& s : c.methods) {
    std::snprintf(line, sizeof line, "%-27s %13s %9s %10s %5zu\n", display_name(s.method).c_str(),
                  detail::fixed(s.physics_residual, 4).c_str(), detail::thousands(s.param_count).c_str(),
                  detail::fixed(s.data_mse, 4).c_str(), s.runs);
    t << line;
  }
  t << "(medians over seeds)\n";
  const MethodSummary* mo = c.find(Method::MultiOutput);
  const MethodSummary* ao = c.find(Method::TapinnAo);
  if (mo && ao && ao->grad_norm_mean > 0.0 && ao->grad_norm_variance > 0.0) {
    t << "Gradient norm, multi_output vs tapinn_ao: mean ratio " << detail::fixed(mo->grad_norm_mean / ao->grad_norm_mean, 2)
      << "x, variance ratio " << detail::fixed(mo->grad_norm_variance / ao->grad_norm_variance, 2) << "x\n";
  } else {
    t << "Gradient norm ratio: needs multi_output and tapinn_ao runs\n";
  }
  if (ao && ao->probe_mse) {
    t << "Linear probe MSE (tapinn_ao, test embeddings): " << detail::sci(*ao->probe_mse) << '\n';
  } else {
    t << "Linear probe MSE (tapinn_ao): n/a\n";
  }
  return t.str();
}

inline std::string render_aggregate_csv(const Comparison& c) {
  std::ostringstream out;
  out << "method,seed,physics_residual,data_mse,param_count,grad_norm_mean,grad_norm_variance,probe_mse\n";
  for (const auto& r : c.reports) {
    out << r.method << ',' << r.seed << ',' << detail::format_g17(r.physics_residual) << ',' << detail::format_g17(r.data_mse) << ','
        << r.param_count << ',' << detail::format_g17(r.grad_norm_mean) << ',' << detail::format_g17(r.grad_norm_variance) << ','
        << (r.probe_mse ? detail::format_g17(*r.probe_mse) : std::string()) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const Comparison& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : c.methods) {
    j[to_string(s.method)] = {{"runs", s.runs},
                              {"param_count", s.param_count},
                              {"physics_residual", s.physics_residual},
                              {"data_mse", s.data_mse},
                              {"grad_norm_mean", s.grad_norm_mean},
                              {"grad_norm_variance", s.grad_norm_variance},
                              {"probe_mse", s.probe_mse ? nlohmann::json(*s.probe_mse) : nlohmann::json(nullptr)}};
  }
  return j;
}

/// Collects eval.json under runs_dir (evaluating runs that lack one) and writes
/// aggregate.csv, table.txt and compare.json into out_dir.
inline Comparison compare_runs(const fs::path& runs_dir, const fs::path& out_dir) {
  const auto runs = find_runs(runs_dir);
  if (runs.empty()) throw ConfigError("no runs (run.json) found under " + runs_dir.string());
  std::vector<EvalReport> reports;
  for (const auto& dir : runs) {
    const fs::path ev = dir / "eval.json";
    reports.push_back(fs::exists(ev) ? eval_report_from_json(nlohmann::json::parse(detail::read_text(ev)))
                                     : evaluate_run(dir));
  }
  Comparison c = summarize(std::move(reports));
  fs::create_directories(out_dir);
  detail::write_text(out_dir / "aggregate.csv", render_aggregate_csv(c));
  detail::write_text(out_dir / "table.txt", render_table(c));
  detail::write_text(out_dir / "compare.json", to_json(c).dump(2) + "\n");
  return c;
}

inline int cmd_compare(const fs::path& runs_dir, const fs::path& out_dir, Console io = {}) {
  return guarded(io, [&] {
    const Comparison c = compare_runs(runs_dir, out_dir.empty() ? runs_dir : out_dir);
    io.out << render_table(c);
    return kExitOk;
  });
}

inline int cmd_dump_defaults(Console io = {}) {
  io.out << dump_config(ExperimentConfig{});
  return kExitOk;
}

}  // namespace tapinn
