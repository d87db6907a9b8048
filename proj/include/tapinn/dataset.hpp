// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tapinn/duffing.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/rng.hpp"

namespace tapinn {

enum class Split { Train, Test };

struct DatasetConfig {
  DuffingParams duffing{};
  std::vector<double> regimes{0.3, 0.5, 0.8};
  std::size_t per_regime = 500;
  double dt = 0.01;
  std::size_t samples = 1000;
  double x0_min = -1.0, x0_max = 1.0;
  double v0_min = -0.5, v0_max = 0.5;
  double train_fraction = 0.8;

  /// Time span covered by the stored samples, used for collocation and time scaling.
  double horizon() const { return static_cast<double>(samples) * dt; }
};

struct Dataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;
  std::vector<Split> split;

  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == which) out.push_back(i);
    }
    return out;
  }

  std::vector<double> labels() const {
    std::vector<double> out;
    out.reserve(trajectories.size());
    for (const auto& t : trajectories) out.push_back(t.f0);
    return out;
  }
};

/// Number of items of a regime assigned to train; the split rounds toward train.
inline std::size_t train_count(std::size_t n, double train_fraction) {
  const auto test = static_cast<std::size_t>(std::floor((1.0 - train_fraction) * static_cast<double>(n) + 1e-9));
  return n - std::min(test, n);
}

/// Simulates every regime from seeded uniform initial conditions and assigns a
/// stratified split. Trajectory ids run regime-major.
inline Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.regimes.empty()) throw ConfigError("generate_dataset: regimes list is empty");
  if (cfg.per_regime < 1) throw ConfigError("generate_dataset: per-regime count must be >= 1");
  if (cfg.samples < 1) throw ConfigError("generate_dataset: samples must be >= 1");
  cfg.duffing.validate();

  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.trajectories.reserve(cfg.regimes.size() * cfg.per_regime);
  ds.split.assign(cfg.regimes.size() * cfg.per_regime, Split::Train);

  Rng ic_rng(seed, 0);
  Rng split_rng(seed, 1);
  std::int64_t next_id = 0;
  for (double f0 : cfg.regimes) {
    std::vector<std::size_t> members;
    for (std::size_t j = 0; j < cfg.per_regime; ++j) {
      const double x0 = ic_rng.uniform(cfg.x0_min, cfg.x0_max);
      const double v0 = ic_rng.uniform(cfg.v0_min, cfg.v0_max);
      try {
        ds.trajectories.push_back(simulate_trajectory(f0, x0, v0, cfg.samples - 1, cfg.dt, cfg.duffing, next_id));
      } catch (const NonFinite& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, " (f0=%.17g, x0=%.17g, v0=%.17g)", f0, x0, v0);
        throw NonFinite(e.what() + std::string(buf));
      }
      members.push_back(static_cast<std::size_t>(next_id));
      ++next_id;
    }
    split_rng.shuffle(members);
    const std::size_t n_train = train_count(members.size(), cfg.train_fraction);
    for (std::size_t j = n_train; j < members.size(); ++j) ds.split[members[j]] = Split::Test;
  }
  return ds;
}

namespace detail {

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_split_csv(const Dataset& ds, Split which, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "traj_id,f0,step,t,x,v\n";
  std::string line;
  char buf[200];
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    if (ds.split[i] != which) continue;
    const Trajectory& tr = ds.trajectories[i];
    for (std::size_t k = 0; k < tr.size(); ++k) {
      const int n = std::snprintf(buf, sizeof buf, "%lld,%.17g,%zu,%.17g,%.17g,%.17g\n",
                                  static_cast<long long>(tr.traj_id), tr.f0, k, tr.times[k], tr.states[k].x,
                                  tr.states[k].v);
      out.write(buf, n);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("bad number in dataset: " + std::string(s));
  return v;
}

inline void read_split_csv(const std::filesystem::path& path, std::map<std::int64_t, Trajectory>& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "traj_id,f0,step,t,x,v") throw IoError("unexpected header in " + path.string());
  std::string_view fields[6];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string_view rest(line);
    for (int f = 0; f < 6; ++f) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (f == 5)) throw IoError("malformed row in " + path.string());
      fields[f] = rest.substr(0, comma);
      if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
    }
    const auto id = static_cast<std::int64_t>(parse_double(fields[0]));
    Trajectory& tr = out[id];
    tr.traj_id = id;
    tr.f0 = parse_double(fields[1]);
    tr.times.push_back(parse_double(fields[3]));
    tr.states.push_back({parse_double(fields[4]), parse_double(fields[5])});
  }
}

}  // namespace detail

inline nlohmann::json to_json(const DuffingParams& p) {
  return {{"delta", p.delta}, {"alpha", p.alpha}, {"beta", p.beta}, {"omega", p.omega}};
}

/// Writes train.csv, test.csv and manifest.json into dir.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  detail::write_split_csv(ds, Split::Train, dir / "train.csv");
  detail::write_split_csv(ds, Split::Test, dir / "test.csv");

  const auto& c = ds.config;
  nlohmann::json train_ids = nlohmann::json::array(), test_ids = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    (ds.split[i] == Split::Train ? train_ids : test_ids).push_back(ds.trajectories[i].traj_id);
  }
  nlohmann::json m;
  m["duffing"] = to_json(c.duffing);
  m["dt"] = c.dt;
  m["samples"] = c.samples;
  m["regimes"] = c.regimes;
  m["per_regime"] = c.per_regime;
  m["train_fraction"] = c.train_fraction;
  m["initial_conditions"] = {{"x0", {c.x0_min, c.x0_max}}, {"v0", {c.v0_min, c.v0_max}}, {"distribution", "uniform"}};
  m["seed"] = ds.seed;
  m["counts"] = {{"total", ds.trajectories.size()}, {"train", train_ids.size()}, {"test", test_ids.size()}};
  m["split"] = {{"train", train_ids}, {"test", test_ids}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("missing manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  auto& c = ds.config;
  c.duffing.delta = m["duffing"]["delta"];
  c.duffing.alpha = m["duffing"]["alpha"];
  c.duffing.beta = m["duffing"]["beta"];
  c.duffing.omega = m["duffing"]["omega"];
  c.dt = m["dt"];
  c.samples = m["samples"];
  c.regimes = m["regimes"].get<std::vector<double>>();
  c.per_regime = m["per_regime"];
  c.train_fraction = m["train_fraction"];
  c.x0_min = m["initial_conditions"]["x0"][0];
  c.x0_max = m["initial_conditions"]["x0"][1];
  c.v0_min = m["initial_conditions"]["v0"][0];
  c.v0_max = m["initial_conditions"]["v0"][1];
  ds.seed = m["seed"];

  std::map<std::int64_t, Trajectory> by_id;
  detail::read_split_csv(dir / "train.csv", by_id);
  detail::read_split_csv(dir / "test.csv", by_id);
  std::map<std::int64_t, Split> split_of;
  for (auto id : m["split"]["train"]) split_of[id.get<std::int64_t>()] = Split::Train;
  for (auto id : m["split"]["test"]) split_of[id.get<std::int64_t>()] = Split::Test;
  for (auto& [id, tr] : by_id) {
    tr.dt = c.dt;
    if (tr.size() != c.samples) throw IoError("trajectory " + std::to_string(id) + " has wrong sample count");
    auto it = split_of.find(id);
    if (it == split_of.end()) throw IoError("trajectory " + std::to_string(id) + " missing from split manifest");
    ds.split.push_back(it->second);
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace tapinn
