// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tapinn/errors.hpp"
#include "tapinn/rng.hpp"

namespace tapinn {

using Mat = Eigen::MatrixXd;

enum class ModelKind { Tapinn, MultiOutput, Parametric, HyperPinn };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Tapinn: return "tapinn";
    case ModelKind::MultiOutput: return "multi_output";
    case ModelKind::Parametric: return "parametric";
    case ModelKind::HyperPinn: return "hyperpinn";
  }
  return "unknown";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "tapinn") return ModelKind::Tapinn;
  if (s == "multi_output") return ModelKind::MultiOutput;
  if (s == "parametric") return ModelKind::Parametric;
  if (s == "hyperpinn") return ModelKind::HyperPinn;
  throw ConfigError("unknown model kind: " + std::string(s));
}

/// Layer widths of every architecture. Defaults land within 1% of the reference budgets.
struct ArchitectureDims {
  std::size_t window_len = 100;
  std::size_t lstm_hidden = 32;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> generator_hidden{52, 52};
  std::vector<std::size_t> parametric_hidden{64, 64, 64};
  std::vector<std::size_t> hyper_hidden{32, 32};
  std::vector<std::size_t> target_hidden{32, 32};
  /// Generator inputs see t / horizon.
  double horizon = 10.0;

  bool operator==(const ArchitectureDims&) const = default;
};

inline nlohmann::json to_json(const ArchitectureDims& d) {
  return {{"window_len", d.window_len},         {"lstm_hidden", d.lstm_hidden},
          {"latent_dim", d.latent_dim},         {"generator_hidden", d.generator_hidden},
          {"parametric_hidden", d.parametric_hidden}, {"hyper_hidden", d.hyper_hidden},
          {"target_hidden", d.target_hidden},   {"horizon", d.horizon}};
}

inline ArchitectureDims dims_from_json(const nlohmann::json& j) {
  ArchitectureDims d;
  d.window_len = j.at("window_len");
  d.lstm_hidden = j.at("lstm_hidden");
  d.latent_dim = j.at("latent_dim");
  d.generator_hidden = j.at("generator_hidden").get<std::vector<std::size_t>>();
  d.parametric_hidden = j.at("parametric_hidden").get<std::vector<std::size_t>>();
  d.hyper_hidden = j.at("hyper_hidden").get<std::vector<std::size_t>>();
  d.target_hidden = j.at("target_hidden").get<std::vector<std::size_t>>();
  d.horizon = j.at("horizon");
  return d;
}

/// All learnable arrays of one model, in a fixed order.
struct ModelParams {
  ModelKind kind = ModelKind::Tapinn;
  ArchitectureDims dims{};
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<Mat> arrays;

  std::size_t size() const { return arrays.size(); }

  void add(std::string name, Mat value) {
    names.push_back(std::move(name));
    arrays.push_back(std::move(value));
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw ShapeMismatch("no parameter array named " + std::string(name));
  }

  const Mat& operator[](std::string_view name) const { return arrays[index_of(name)]; }
  Mat& operator[](std::string_view name) { return arrays[index_of(name)]; }

  /// Arrays whose name starts with prefix.
  std::vector<bool> mask(std::string_view prefix) const {
    std::vector<bool> m(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) m[i] = names[i].starts_with(prefix);
    return m;
  }

  ModelParams subset(std::string_view prefix) const {
    ModelParams out;
    out.kind = kind;
    out.dims = dims;
    out.seed = seed;
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i].starts_with(prefix)) out.add(names[i], arrays[i]);
    }
    return out;
  }

  bool has_encoder() const { return kind == ModelKind::Tapinn || kind == ModelKind::MultiOutput; }
};

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const Mat& a : p.arrays) n += static_cast<std::size_t>(a.size());
  return n;
}

/// Size of a dense tanh MLP with the given layer widths (input first, output last).
inline std::size_t mlp_param_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += widths[i] * widths[i + 1] + widths[i + 1];
  return n;
}

inline std::vector<std::size_t> generator_widths(const ArchitectureDims& d, std::size_t outputs) {
  std::vector<std::size_t> w{1 + d.latent_dim};
  w.insert(w.end(), d.generator_hidden.begin(), d.generator_hidden.end());
  w.push_back(outputs);
  return w;
}

inline std::vector<std::size_t> parametric_widths(const ArchitectureDims& d) {
  std::vector<std::size_t> w{2};
  w.insert(w.end(), d.parametric_hidden.begin(), d.parametric_hidden.end());
  w.push_back(1);
  return w;
}

inline std::vector<std::size_t> target_widths(const ArchitectureDims& d) {
  std::vector<std::size_t> w{1};
  w.insert(w.end(), d.target_hidden.begin(), d.target_hidden.end());
  w.push_back(1);
  return w;
}

inline std::vector<std::size_t> hyper_widths(const ArchitectureDims& d) {
  std::vector<std::size_t> w{1};
  w.insert(w.end(), d.hyper_hidden.begin(), d.hyper_hidden.end());
  w.push_back(mlp_param_count(target_widths(d)));
  return w;
}

namespace detail {

inline Mat glorot(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  // row-major draw order, independent of storage order
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
  }
  return w;
}

inline void add_mlp(ModelParams& p, Rng& rng, const std::string& prefix, const std::vector<std::size_t>& widths) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string layer = prefix + ".l" + std::to_string(i);
    p.add(layer + ".w", glorot(rng, widths[i + 1], widths[i]));
    p.add(layer + ".b", Mat::Zero(static_cast<Eigen::Index>(widths[i + 1]), 1));
  }
}

inline void add_encoder(ModelParams& p, Rng& rng, const ArchitectureDims& d) {
  const std::size_t h = d.lstm_hidden;
  p.add("encoder.lstm.w_x", glorot(rng, 4 * h, 2));
  p.add("encoder.lstm.w_h", glorot(rng, 4 * h, h));
  Mat b = Mat::Zero(static_cast<Eigen::Index>(4 * h), 1);
  b.middleRows(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(h)).setOnes();  // forget gate
  p.add("encoder.lstm.b", std::move(b));
  p.add("encoder.head.w", glorot(rng, d.latent_dim, h));
  p.add("encoder.head.b", Mat::Zero(static_cast<Eigen::Index>(d.latent_dim), 1));
}

}  // namespace detail

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1. Deterministic in (kind, seed, dims).
inline ModelParams init_params(ModelKind kind, std::uint64_t seed, const ArchitectureDims& dims) {
  if (dims.lstm_hidden == 0 || dims.latent_dim == 0 || dims.window_len == 0 || !(dims.horizon > 0.0)) {
    throw ConfigError("init_params: dimensions must be positive");
  }
  ModelParams p;
  p.kind = kind;
  p.dims = dims;
  p.seed = seed;
  Rng rng(seed, 100);
  switch (kind) {
    case ModelKind::Tapinn:
      detail::add_encoder(p, rng, dims);
      detail::add_mlp(p, rng, "generator", generator_widths(dims, 1));
      break;
    case ModelKind::MultiOutput:
      detail::add_encoder(p, rng, dims);
      detail::add_mlp(p, rng, "generator", generator_widths(dims, 2));
      break;
    case ModelKind::Parametric:
      detail::add_mlp(p, rng, "mlp", parametric_widths(dims));
      break;
    case ModelKind::HyperPinn:
      detail::add_mlp(p, rng, "hyper", hyper_widths(dims));
      break;
  }
  return p;
}

// ---- checkpoints: <stem>.json manifest + <stem>.bin little-endian f64, arrays in order, column-major ----

namespace detail {

inline void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline double read_f64_le(std::istream& in) {
  std::uint64_t bits = 0;
  in.read(reinterpret_cast<char*>(&bits), sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& stem) {
  std::error_code ec;
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path(), ec);
  const std::filesystem::path bin = stem.string() + ".bin";
  const std::filesystem::path manifest = stem.string() + ".json";

  nlohmann::json arrays = nlohmann::json::array();
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw IoError("cannot write " + bin.string());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Mat& a = p.arrays[i];
      for (Eigen::Index k = 0; k < a.size(); ++k) detail::write_f64_le(out, a.data()[k]);
      arrays.push_back({{"name", p.names[i]}, {"rows", a.rows()}, {"cols", a.cols()}});
    }
    if (!out) throw IoError("write failed: " + bin.string());
  }
  nlohmann::json j;
  j["kind"] = to_string(p.kind);
  j["seed"] = p.seed;
  j["param_count"] = param_count(p);
  j["dims"] = to_json(p.dims);
  j["arrays"] = arrays;
  j["format"] = {{"dtype", "f64"}, {"byte_order", "little"}, {"layout", "column-major"}};
  std::ofstream out(manifest, std::ios::binary);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
}

inline ModelParams load_checkpoint(const std::filesystem::path& stem) {
  const std::filesystem::path manifest = stem.string() + ".json";
  std::ifstream mf(manifest);
  if (!mf) throw IoError("missing checkpoint " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  ModelParams p;
  p.kind = model_kind_from_string(j.at("kind").get<std::string>());
  p.seed = j.at("seed");
  p.dims = dims_from_json(j.at("dims"));
  std::ifstream in(stem.string() + ".bin", std::ios::binary);
  if (!in) throw IoError("missing checkpoint blob for " + stem.string());
  for (const auto& a : j.at("arrays")) {
    Mat m(a.at("rows").get<Eigen::Index>(), a.at("cols").get<Eigen::Index>());
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = detail::read_f64_le(in);
    if (!in) throw IoError("truncated checkpoint blob for " + stem.string());
    p.add(a.at("name").get<std::string>(), std::move(m));
  }
  if (param_count(p) != j.at("param_count").get<std::size_t>()) {
    throw IoError("checkpoint param_count mismatch for " + stem.string());
  }
  return p;
}

}  // namespace tapinn
