// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward passes of every architecture, written once over a backend type T
// (ad::Mat for plain evaluation, ad::Var for taped training) and, for the
// time-conditioned networks, over X = T or X = ad::Jet<T> so the same code
// yields x(t), x'(t), x''(t).

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tapinn/autodiff/jet.hpp"
#include "tapinn/dataset.hpp"
#include "tapinn/errors.hpp"
#include "tapinn/params.hpp"

namespace tapinn {

using ad::Index;
using ad::Jet;

/// The first window_len (x, v) samples of a trajectory as a 2 x window_len matrix.
/// f0 is the regime label; it never enters the encoder.
struct ObservationWindow {
  Mat values;
  double f0 = 0.0;

  static ObservationWindow from_trajectory(const Trajectory& tr, std::size_t window_len) {
    if (tr.size() < window_len) throw ShapeMismatch("trajectory shorter than the observation window");
    ObservationWindow w;
    w.f0 = tr.f0;
    w.values.resize(2, static_cast<Index>(window_len));
    for (std::size_t k = 0; k < window_len; ++k) {
      w.values(0, static_cast<Index>(k)) = tr.states[k].x;
      w.values(1, static_cast<Index>(k)) = tr.states[k].v;
    }
    return w;
  }
};

/// Per-timestep 2 x B inputs for a batch of windows.
inline std::vector<Mat> window_steps(const std::vector<ObservationWindow>& windows) {
  if (windows.empty()) throw ShapeMismatch("window_steps: empty batch");
  const Index len = windows.front().values.cols();
  std::vector<Mat> steps(static_cast<std::size_t>(len), Mat(2, static_cast<Index>(windows.size())));
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].values.cols() != len || windows[b].values.rows() != 2) {
      throw ShapeMismatch("window_steps: windows differ in length");
    }
    for (Index k = 0; k < len; ++k) steps[static_cast<std::size_t>(k)].col(static_cast<Index>(b)) = windows[b].values.col(k);
  }
  return steps;
}

template <class T>
struct LstmWeights {
  T w_x;  // 4H x in, gate blocks ordered i, f, g, o
  T w_h;  // 4H x H
  T b;    // 4H x 1
};

template <class T>
struct EncoderWeights {
  LstmWeights<T> lstm;
  T head_w;
  T head_b;
};

/// (weight, bias) pairs of a dense network.
template <class T>
using Layers = std::vector<std::pair<T, T>>;

/// Parameter arrays in the backend's representation.
inline std::vector<Mat> plain_view(const ModelParams& p) { return p.arrays; }

template <class T>
EncoderWeights<T> encoder_weights(const std::vector<T>& p) {
  return {{p[0], p[1], p[2]}, p[3], p[4]};
}

template <class T>
Layers<T> mlp_layers(const std::vector<T>& p, std::size_t first, std::size_t n_layers) {
  if (first + 2 * n_layers > p.size()) throw ShapeMismatch("mlp_layers: not enough parameter arrays");
  Layers<T> out;
  for (std::size_t i = 0; i < n_layers; ++i) out.emplace_back(p[first + 2 * i], p[first + 2 * i + 1]);
  return out;
}

/// One LSTM step on a batch of column inputs.
template <class T>
std::pair<T, T> lstm_cell(const T& input, const T& h_prev, const T& c_prev, const LstmWeights<T>& w) {
  const Index h = h_prev.rows();
  if (w.w_x.rows() != 4 * h || w.w_h.rows() != 4 * h || w.w_h.cols() != h || w.b.rows() != 4 * h ||
      w.w_x.cols() != input.rows() || c_prev.rows() != h || input.cols() != h_prev.cols() ||
      c_prev.cols() != h_prev.cols()) {
    throw ShapeMismatch("lstm_cell: inconsistent dimensions");
  }
  using namespace ad;
  T gates = add_bias(add(matmul(w.w_x, input), matmul(w.w_h, h_prev)), w.b);
  T i = sigmoid(slice_rows(gates, 0, h));
  T f = sigmoid(slice_rows(gates, h, h));
  T g = tanh(slice_rows(gates, 2 * h, h));
  T o = sigmoid(slice_rows(gates, 3 * h, h));
  T c = add(cmul(f, c_prev), cmul(i, g));
  T hn = cmul(o, tanh(c));
  return {std::move(hn), std::move(c)};
}

/// z = head(h_T) after running the LSTM over every step. steps[k] is in x B.
template <class T>
T encoder_forward(const std::vector<T>& steps, const EncoderWeights<T>& w) {
  if (steps.empty()) throw ShapeMismatch("encoder_forward: empty window");
  const Index h = w.lstm.w_h.cols();
  const Index batch = steps.front().cols();
  T hs = ad::constant_like(steps.front(), Mat::Zero(h, batch));
  T cs = hs;
  for (const T& x : steps) {
    auto [hn, cn] = lstm_cell(x, hs, cs, w.lstm);
    hs = std::move(hn);
    cs = std::move(cn);
  }
  return ad::add_bias(ad::matmul(w.head_w, hs), w.head_b);
}

/// Latent codes (latent_dim x B) for a batch of windows, value only.
inline Mat encode(const ModelParams& p, const std::vector<ObservationWindow>& windows) {
  if (!p.has_encoder()) throw ShapeMismatch("encode: model has no encoder");
  if (static_cast<std::size_t>(windows.front().values.cols()) != p.dims.window_len) {
    throw ShapeMismatch("encode: window length differs from the configured window_len");
  }
  return encoder_forward(window_steps(windows), encoder_weights(p.arrays));
}

/// Dense network with tanh on hidden layers and a linear output layer.
template <class T, class X>
X mlp_forward(const Layers<T>& layers, X x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ad::add_bias(ad::matmul(layers[i].first, x), layers[i].second);
    if (i + 1 < layers.size()) x = ad::tanh(x);
  }
  return x;
}

namespace detail {

template <class T, class X>
X lift_constant(const X& like, const T& value) {
  if constexpr (std::is_same_v<X, T>) {
    (void)like;
    return value;
  } else {
    return ad::lift_like(value);
  }
}

template <class X>
X scale_time(const X& t, double horizon) {
  return ad::scale(t, 1.0 / horizon);
}

template <class X>
Index cols_of(const X& x) {
  if constexpr (requires { x.v; }) {
    return x.v.cols();
  } else {
    return x.cols();
  }
}

}  // namespace detail

/// G(t, z): input rows [t / horizon; z]. t is 1 x N, z is latent_dim x N.
template <class T, class X>
X generator_forward(const Layers<T>& layers, const X& t, const T& z, double horizon) {
  const X input = ad::concat_rows(std::vector<X>{detail::scale_time(t, horizon), detail::lift_constant<T>(t, z)});
  return mlp_forward(layers, input);
}

/// Baseline I: input rows [t / horizon; lambda].
template <class T, class X>
X parametric_forward(const Layers<T>& layers, const X& t, const T& lambda, double horizon) {
  const X input =
      ad::concat_rows(std::vector<X>{detail::scale_time(t, horizon), detail::lift_constant<T>(t, lambda)});
  return mlp_forward(layers, input);
}

/// Baseline II hypernetwork: lambda (1 x B) -> flattened target weights (W x B).
template <class T>
T hypernet_forward(const Layers<T>& hyper, const T& lambda) {
  return mlp_forward(hyper, lambda);
}

/// Unpacks one column of hypernet output into target-network layers,
/// in the same (w column-major, b) order mlp parameters are stored.
template <class T>
Layers<T> target_layers(const T& flat, const std::vector<std::size_t>& widths) {
  Layers<T> out;
  Index offset = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto in = static_cast<Index>(widths[i]);
    const auto outw = static_cast<Index>(widths[i + 1]);
    T w = ad::reshape(ad::slice_rows(flat, offset, in * outw), outw, in);
    offset += in * outw;
    T b = ad::slice_rows(flat, offset, outw);
    offset += outw;
    out.emplace_back(std::move(w), std::move(b));
  }
  if (offset != flat.rows()) throw ShapeMismatch("target_layers: flat weight vector has the wrong size");
  return out;
}

/// Everything a model needs besides time: latent codes (encoder models) or
/// forcing amplitudes (baselines I and II), one column per batch item.
/// Time inputs hold points_per_item consecutive columns per item.
template <class T, class X>
X solution_forward(const ModelParams& meta, const std::vector<T>& p, const T& cond, const X& t, Index points_per_item) {
  const ArchitectureDims& d = meta.dims;
  const Index items = cond.cols();
  if (detail::cols_of(t) != items * points_per_item) throw ShapeMismatch("solution_forward: time/condition mismatch");
  switch (meta.kind) {
    case ModelKind::Tapinn:
    case ModelKind::MultiOutput: {
      const auto layers = mlp_layers(p, 5, d.generator_hidden.size() + 1);
      return generator_forward(layers, t, ad::repeat_cols(cond, points_per_item), d.horizon);
    }
    case ModelKind::Parametric: {
      const auto layers = mlp_layers(p, 0, d.parametric_hidden.size() + 1);
      return parametric_forward(layers, t, ad::repeat_cols(cond, points_per_item), d.horizon);
    }
    case ModelKind::HyperPinn: {
      const auto hyper = mlp_layers(p, 0, d.hyper_hidden.size() + 1);
      const T flat = hypernet_forward(hyper, cond);
      const auto widths = target_widths(d);
      std::vector<X> outs;
      for (Index b = 0; b < items; ++b) {
        const auto target = target_layers(ad::slice_cols(flat, b, 1), widths);
        const X tb = ad::slice_cols(t, b * points_per_item, points_per_item);
        outs.push_back(mlp_forward(target, detail::scale_time(tb, d.horizon)));
      }
      return ad::concat_cols(outs);
    }
  }
  throw ShapeMismatch("solution_forward: unknown model kind");
}

/// Latent codes for encoder models, forcing amplitudes otherwise; value only.
inline Mat conditioning(const ModelParams& p, const std::vector<ObservationWindow>& windows) {
  if (p.has_encoder()) return encode(p, windows);
  Mat lambda(1, static_cast<Index>(windows.size()));
  for (std::size_t b = 0; b < windows.size(); ++b) lambda(0, static_cast<Index>(b)) = windows[b].f0;
  return lambda;
}

}  // namespace tapinn
