// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat key=value experiment configuration with dataset., train. and eval.
// sections. Unknown keys are rejected. Any key can be overridden from the
// environment as TAPINN_<KEY>, upper-cased with dots turned into underscores
// (train.epochs -> TAPINN_TRAIN_EPOCHS).

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tapinn/dataset.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/training.hpp"

namespace tapinn {

struct RegimeCheckConfig {
  double x0 = 0.1;
  double v0 = 0.0;
  std::size_t periods = 250;
  std::size_t warmup_periods = 150;
};

struct EvalConfig {
  std::size_t n_collocation = 10000;
  std::uint64_t seed = 20260;
  double probe_ridge = 1e-8;
  bool record_runtime = false;
};

struct ExperimentConfig {
  std::string dataset_path = "data";
  DatasetConfig dataset{};
  RegimeCheckConfig regime_check{};
  TrainConfig train{};
  EvalConfig eval{};
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T, class Parse>
std::vector<T> to_list(const std::string& key, const std::string& s, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(parse(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

template <class T, class Format>
std::string join(const std::vector<T>& v, Format fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

}  // namespace detail

struct ConfigEntry {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

/// Every configurable key, bound to the fields of cfg, in dump order.
inline std::vector<ConfigEntry> config_entries(ExperimentConfig& cfg) {
  using namespace detail;
  std::vector<ConfigEntry> e;
  auto num = [&e](std::string key, double* field) {
    e.push_back({key, [field] { return format_double(*field); },
                 [key, field](const std::string& s) { *field = to_double(key, s); }});
  };
  auto count = [&e](std::string key, auto* field) {
    e.push_back({key, [field] { return std::to_string(*field); },
                 [key, field](const std::string& s) {
                   *field = static_cast<std::remove_pointer_t<decltype(field)>>(to_u64(key, s));
                 }});
  };
  auto flag = [&e](std::string key, bool* field) {
    e.push_back({key, [field] { return std::string(*field ? "true" : "false"); },
                 [key, field](const std::string& s) { *field = to_bool(key, s); }});
  };
  auto widths = [&e](std::string key, std::vector<std::size_t>* field) {
    e.push_back({key, [field] { return join(*field, [](std::size_t w) { return std::to_string(w); }); },
                 [key, field](const std::string& s) {
                   *field = to_list<std::size_t>(key, s, [](const std::string& k, const std::string& v) {
                     return static_cast<std::size_t>(to_u64(k, v));
                   });
                 }});
  };

  e.push_back({"dataset.path", [&cfg] { return cfg.dataset_path; },
               [&cfg](const std::string& s) { cfg.dataset_path = s; }});
  num("dataset.delta", &cfg.dataset.duffing.delta);
  num("dataset.alpha", &cfg.dataset.duffing.alpha);
  num("dataset.beta", &cfg.dataset.duffing.beta);
  num("dataset.omega", &cfg.dataset.duffing.omega);
  e.push_back({"dataset.regimes", [&cfg] { return join(cfg.dataset.regimes, format_double); },
               [&cfg](const std::string& s) { cfg.dataset.regimes = to_list<double>("dataset.regimes", s, to_double); }});
  count("dataset.per_regime", &cfg.dataset.per_regime);
  num("dataset.dt", &cfg.dataset.dt);
  count("dataset.samples", &cfg.dataset.samples);
  num("dataset.x0_min", &cfg.dataset.x0_min);
  num("dataset.x0_max", &cfg.dataset.x0_max);
  num("dataset.v0_min", &cfg.dataset.v0_min);
  num("dataset.v0_max", &cfg.dataset.v0_max);
  num("dataset.train_fraction", &cfg.dataset.train_fraction);
  num("dataset.check_x0", &cfg.regime_check.x0);
  num("dataset.check_v0", &cfg.regime_check.v0);
  count("dataset.check_periods", &cfg.regime_check.periods);
  count("dataset.check_warmup_periods", &cfg.regime_check.warmup_periods);

  e.push_back({"train.method", [&cfg] { return to_string(cfg.train.method); },
               [&cfg](const std::string& s) { cfg.train.method = method_from_string(s); }});
  count("train.epochs", &cfg.train.epochs);
  num("train.lr", &cfg.train.lr);
  num("train.alpha", &cfg.train.alpha);
  num("train.beta", &cfg.train.beta);
  num("train.margin", &cfg.train.margin);
  count("train.k_joint", &cfg.train.k_joint);
  count("train.phase1_epochs", &cfg.train.phase1_epochs);
  count("train.phase2_epochs", &cfg.train.phase2_epochs);
  count("train.batch_size", &cfg.train.batch_size);
  count("train.seed", &cfg.train.seed);
  count("train.collocation_points", &cfg.train.collocation_points);
  count("train.data_points", &cfg.train.data_points);
  num("train.divergence_threshold", &cfg.train.divergence_threshold);
  flag("train.record_wall_time", &cfg.train.record_wall_time);
  count("train.window_len", &cfg.train.dims.window_len);
  count("train.lstm_hidden", &cfg.train.dims.lstm_hidden);
  count("train.latent_dim", &cfg.train.dims.latent_dim);
  widths("train.generator_hidden", &cfg.train.dims.generator_hidden);
  widths("train.parametric_hidden", &cfg.train.dims.parametric_hidden);
  widths("train.hyper_hidden", &cfg.train.dims.hyper_hidden);
  widths("train.target_hidden", &cfg.train.dims.target_hidden);

  count("eval.n_collocation", &cfg.eval.n_collocation);
  count("eval.seed", &cfg.eval.seed);
  num("eval.probe_ridge", &cfg.eval.probe_ridge);
  flag("eval.record_runtime", &cfg.eval.record_runtime);
  return e;
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& entry : config_entries(cfg)) {
    if (entry.key == key) {
      entry.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string env_name(const std::string& key) {
  std::string out = "TAPINN_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline void apply_env_overrides(ExperimentConfig& cfg) {
  for (auto& entry : config_entries(cfg)) {
    if (const char* v = std::getenv(env_name(entry.key).c_str())) entry.set(detail::trim(v));
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      set_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

/// Reads a config file, then applies environment overrides.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  ExperimentConfig cfg = parse_config(in, path.string());
  apply_env_overrides(cfg);
  return cfg;
}

inline std::string dump_config(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  std::string out;
  for (auto& entry : config_entries(cfg)) out += entry.key + " = " + entry.get() + "\n";
  return out;
}

}  // namespace tapinn
