// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tapinn/errors.hpp"

namespace tapinn {

/// Coefficients of x'' + delta x' + alpha x + beta x^3 = f0 cos(omega t).
struct DuffingParams {
  double delta = 0.3;
  double alpha = -1.0;
  double beta = 1.0;
  double omega = 1.4;
  double f0 = 0.0;

  DuffingParams with_forcing(double amplitude) const {
    DuffingParams p = *this;
    p.f0 = amplitude;
    return p;
  }

  void validate() const {
    if (!(delta >= 0.0) || !(omega > 0.0) || !(f0 >= 0.0) || !std::isfinite(alpha) ||
        !std::isfinite(beta)) {
      throw ConfigError("invalid Duffing parameters: require delta >= 0, omega > 0, f0 >= 0");
    }
  }

  double forcing_period() const { return 2.0 * std::numbers::pi / omega; }
};

struct State {
  double x = 0.0;
  double v = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(v); }
};

struct Trajectory {
  double f0 = 0.0;
  double dt = 0.0;
  std::vector<double> times;
  std::vector<State> states;
  std::int64_t traj_id = 0;

  std::size_t size() const { return states.size(); }
};

inline State duffing_rhs(const State& s, double t, const DuffingParams& p) {
  return {s.v, -p.delta * s.v - p.alpha * s.x - p.beta * s.x * s.x * s.x + p.f0 * std::cos(p.omega * t)};
}

inline State rk4_step(const State& s, double t, double dt, const DuffingParams& p) {
  if (!(dt > 0.0)) throw ConfigError("rk4_step: dt must be positive");
  const double h2 = 0.5 * dt;
  const State k1 = duffing_rhs(s, t, p);
  const State k2 = duffing_rhs({s.x + h2 * k1.x, s.v + h2 * k1.v}, t + h2, p);
  const State k3 = duffing_rhs({s.x + h2 * k2.x, s.v + h2 * k2.v}, t + h2, p);
  const State k4 = duffing_rhs({s.x + dt * k3.x, s.v + dt * k3.v}, t + dt, p);
  if (!k1.finite() || !k2.finite() || !k3.finite() || !k4.finite()) {
    throw NonFinite("rk4_step: non-finite stage at t=" + std::to_string(t));
  }
  const State next{s.x + dt / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
                   s.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v)};
  if (!next.finite()) throw NonFinite("rk4_step: non-finite state at t=" + std::to_string(t + dt));
  return next;
}

/// Integrates n_steps RK4 steps from (x0, v0) at t = 0 and keeps every sample.
/// Sample i sits at exactly i * dt.
inline Trajectory simulate_trajectory(double f0, double x0, double v0, std::size_t n_steps, double dt,
                                      const DuffingParams& base, std::int64_t traj_id = 0) {
  const DuffingParams p = base.with_forcing(f0);
  Trajectory traj;
  traj.f0 = f0;
  traj.dt = dt;
  traj.traj_id = traj_id;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  State s{x0, v0};
  if (!s.finite()) throw NonFinite("simulate_trajectory: non-finite initial condition");
  traj.times.push_back(0.0);
  traj.states.push_back(s);
  for (std::size_t i = 0; i < n_steps; ++i) {
    s = rk4_step(s, static_cast<double>(i) * dt, dt, p);
    traj.times.push_back(static_cast<double>(i + 1) * dt);
    traj.states.push_back(s);
  }
  return traj;
}

struct RegimeOracleOptions {
  /// Time discarded from the start before sampling the section.
  double warmup = 0.0;
  /// Section points closer than this (Euclidean in (x, v)) count as one.
  double cluster_tol = 1e-3;
  /// More distinct section points than this means chaotic.
  std::size_t chaos_threshold = 16;
  std::size_t min_periods = 20;
};

struct RegimeDescriptor {
  bool chaotic = false;
  /// Number of distinct section points (the period k when not chaotic).
  std::size_t distinct_points = 0;
  std::size_t section_samples = 0;

  std::string label() const {
    return chaotic ? std::string("chaotic") : "period-" + std::to_string(distinct_points);
  }
};

namespace detail {

// Cubic Lagrange interpolation through samples i-1..i+2 (clamped at the ends).
inline State interpolate_state(const Trajectory& traj, double t) {
  const std::size_t n = traj.size();
  const double pos = t / traj.dt;
  std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i >= n - 1) i = n - 2;
  std::size_t lo = i >= 1 ? i - 1 : 0;
  if (lo + 3 >= n) lo = n - 4;
  const double u = pos - static_cast<double>(lo);
  State out{0.0, 0.0};
  for (std::size_t a = 0; a < 4; ++a) {
    double w = 1.0;
    for (std::size_t b = 0; b < 4; ++b) {
      if (a != b) w *= (u - static_cast<double>(b)) / (static_cast<double>(a) - static_cast<double>(b));
    }
    out.x += w * traj.states[lo + a].x;
    out.v += w * traj.states[lo + a].v;
  }
  return out;
}

}  // namespace detail

/// Stroboscopic Poincare section at the forcing period, counting distinct points.
inline RegimeDescriptor regime_oracle(const Trajectory& traj, const DuffingParams& p,
                                      const RegimeOracleOptions& opt = {}) {
  const double period = p.forcing_period();
  if (traj.size() < 4 || traj.dt <= 0.0) throw TooShort("regime_oracle: trajectory has fewer than 4 samples");
  const double t_end = traj.times.back();
  const auto first = static_cast<std::size_t>(std::ceil(opt.warmup / period - 1e-12));
  std::vector<State> section;
  for (std::size_t k = first;; ++k) {
    const double t = static_cast<double>(k) * period;
    if (t > t_end) break;
    section.push_back(detail::interpolate_state(traj, t));
  }
  if (section.size() < opt.min_periods) {
    throw TooShort("regime_oracle: only " + std::to_string(section.size()) + " forcing periods after warm-up, need " +
                   std::to_string(opt.min_periods));
  }
  std::vector<State> clusters;
  for (const State& s : section) {
    bool seen = false;
    for (const State& c : clusters) {
      if (std::hypot(s.x - c.x, s.v - c.v) < opt.cluster_tol) {
        seen = true;
        break;
      }
    }
    if (!seen) clusters.push_back(s);
  }
  RegimeDescriptor d;
  d.distinct_points = clusters.size();
  d.section_samples = section.size();
  d.chaotic = clusters.size() > opt.chaos_threshold;
  return d;
}

}  // namespace tapinn
