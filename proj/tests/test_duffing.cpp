// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "tapinn/dataset.hpp"
#include "tapinn/duffing.hpp"
#include "tapinn/rng.hpp"
#include "test_util.hpp"

using namespace tapinn;

namespace {

DuffingParams canonical(double f0 = 0.0) { return {0.3, -1.0, 1.0, 1.2, f0}; }

DuffingParams harmonic() { return {0.0, 1.0, 0.0, 1.0, 0.0}; }

// Independent RK4 written against the ODE directly, for reference runs.
State reference_solve(double x0, double v0, double t_end, double dt, const DuffingParams& p) {
  auto acc = [&](double t, double x, double v) {
    return p.f0 * std::cos(p.omega * t) - p.delta * v - p.alpha * x - p.beta * x * x * x;
  };
  const auto n = static_cast<long>(std::llround(t_end / dt));
  double x = x0, v = v0;
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double a1x = v, a1v = acc(t, x, v);
    const double a2x = v + dt / 2 * a1v, a2v = acc(t + dt / 2, x + dt / 2 * a1x, v + dt / 2 * a1v);
    const double a3x = v + dt / 2 * a2v, a3v = acc(t + dt / 2, x + dt / 2 * a2x, v + dt / 2 * a2v);
    const double a4x = v + dt * a3v, a4v = acc(t + dt, x + dt * a3x, v + dt * a3v);
    x += dt / 6 * (a1x + 2 * a2x + 2 * a3x + a4x);
    v += dt / 6 * (a1v + 2 * a2v + 2 * a3v + a4v);
  }
  return {x, v};
}

double harmonic_error(double dt) {
  const auto n = static_cast<std::size_t>(std::llround(1.0 / dt));
  const Trajectory tr = simulate_trajectory(0.0, 1.0, 0.0, n, dt, harmonic());
  return std::abs(tr.states.back().x - std::cos(1.0));
}

}  // namespace

TEST(DuffingRhs, HandEvaluatedPoints) {
  State d = duffing_rhs({0, 0}, 0.0, canonical());
  EXPECT_EQ(d.x, 0.0);
  EXPECT_EQ(d.v, 0.0);
  d = duffing_rhs({1, 0}, 3.7, canonical());
  EXPECT_EQ(d.x, 0.0);
  EXPECT_EQ(d.v, 0.0);
  d = duffing_rhs({0, 0}, 0.0, canonical(0.5));
  EXPECT_EQ(d.x, 0.0);
  EXPECT_DOUBLE_EQ(d.v, 0.5);
}

TEST(Rk4, FixedPointIsUnchanged) {
  const State s = rk4_step({1, 0}, 0.0, 0.01, canonical());
  EXPECT_EQ(s.x, 1.0);
  EXPECT_EQ(s.v, 0.0);
}

TEST(Rk4, HarmonicSingleStep) {
  const State s = rk4_step({1, 0}, 0.0, 0.01, harmonic());
  EXPECT_LT(std::abs(s.x - std::cos(0.01)), 1e-10);
  EXPECT_LT(std::abs(s.v + std::sin(0.01)), 1e-10);
}

TEST(Rk4, FourthOrderConvergence) {
  for (double dt : {0.1, 0.05, 0.025}) {
    const double ratio = harmonic_error(dt) / harmonic_error(dt / 2);
    EXPECT_NEAR(ratio, 16.0, 16.0 * 0.2) << "dt=" << dt;
  }
}

TEST(Rk4, StepDoublingDifferenceScalesAsDtToTheFourth) {
  const DuffingParams p = canonical(0.5);
  auto gap = [&](double dt) {
    const State one = rk4_step({0.3, -0.2}, 0.4, dt, p);
    const State two = rk4_step(rk4_step({0.3, -0.2}, 0.4, dt / 2, p), 0.4 + dt / 2, dt / 2, p);
    return std::hypot(one.x - two.x, one.v - two.v);
  };
  // local error is O(dt^5), so halving dt shrinks the gap by about 32
  const double ratio = gap(0.02) / gap(0.01);
  EXPECT_GT(ratio, 32.0 * 0.8);
  EXPECT_LT(ratio, 32.0 * 1.2);
}

TEST(Rk4, RejectsNonPositiveStep) {
  EXPECT_THROW(rk4_step({0, 0}, 0.0, 0.0, canonical()), ConfigError);
  EXPECT_THROW(rk4_step({0, 0}, 0.0, -0.1, canonical()), ConfigError);
}

TEST(Rk4, NonFiniteStateIsReported) {
  EXPECT_THROW(rk4_step({1e200, 0}, 0.0, 0.01, canonical()), NonFinite);
}

TEST(Simulate, EnergyConservedWithoutDampingOrForcing) {
  const DuffingParams p{0.0, -1.0, 1.0, 1.2, 0.0};
  auto energy = [&](const State& s) {
    return 0.5 * s.v * s.v + 0.5 * p.alpha * s.x * s.x + 0.25 * p.beta * s.x * s.x * s.x * s.x;
  };
  for (State s0 : {State{0.5, 0.2}, State{-1.2, 0.4}, State{0.1, -0.8}}) {
    const Trajectory tr = simulate_trajectory(0.0, s0.x, s0.v, 1000, 0.01, p);
    const double h0 = energy(tr.states.front());
    double drift = 0.0;
    for (const State& s : tr.states) drift = std::max(drift, std::abs(energy(s) - h0));
    EXPECT_LT(drift, 1e-6);
  }
}

TEST(Simulate, ZeroStepsGivesInitialCondition) {
  const Trajectory tr = simulate_trajectory(0.5, 0.25, -0.1, 0, 0.01, DuffingParams{});
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr.states[0].x, 0.25);
  EXPECT_EQ(tr.states[0].v, -0.1);
  EXPECT_EQ(tr.times[0], 0.0);
}

TEST(Simulate, TimesAreExactMultiplesOfDt) {
  const Trajectory tr = simulate_trajectory(0.5, 0.0, 0.0, 999, 0.01, DuffingParams{});
  ASSERT_EQ(tr.size(), 1000u);
  for (std::size_t i = 0; i < tr.size(); ++i) EXPECT_EQ(tr.times[i], static_cast<double>(i) * 0.01);
}

TEST(Simulate, MatchesFineStepReference) {
  for (const DuffingParams& base : {canonical(), DuffingParams{}}) {
    const Trajectory tr = simulate_trajectory(0.5, 0.1, 0.0, 1000, 0.01, base);
    const State ref = reference_solve(0.1, 0.0, 10.0, 0.001, base.with_forcing(0.5));
    EXPECT_LT(std::abs(tr.states.back().x - ref.x), 1e-4);
    EXPECT_LT(std::abs(tr.states.back().v - ref.v), 1e-4);
  }
}

TEST(Simulate, ForcingRegimesDiverge) {
  const Trajectory a = simulate_trajectory(0.3, 0.1, 0.0, 1000, 0.01, DuffingParams{});
  const Trajectory b = simulate_trajectory(0.8, 0.1, 0.0, 1000, 0.01, DuffingParams{});
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += std::pow(a.states[i].x - b.states[i].x, 2) * 0.01;
  EXPECT_GT(std::sqrt(sq), 0.1);
}

TEST(RegimeOracle, SyntheticCosineIsPeriodOne) {
  const DuffingParams p{};
  Trajectory tr;
  tr.dt = 0.01;
  for (std::size_t i = 0; i <= 20000; ++i) {
    const double t = static_cast<double>(i) * tr.dt;
    tr.times.push_back(t);
    tr.states.push_back({std::cos(p.omega * t), -p.omega * std::sin(p.omega * t)});
  }
  const RegimeDescriptor d = regime_oracle(tr, p);
  EXPECT_FALSE(d.chaotic);
  EXPECT_EQ(d.distinct_points, 1u);
  EXPECT_EQ(d.label(), "period-1");
}

TEST(RegimeOracle, TooShortInputs) {
  const Trajectory five = simulate_trajectory(0.3, 0.1, 0.0, 4, 0.01, DuffingParams{});
  EXPECT_THROW(regime_oracle(five, DuffingParams{}), TooShort);
  const Trajectory few_periods = simulate_trajectory(0.3, 0.1, 0.0, 2000, 0.01, DuffingParams{});
  EXPECT_THROW(regime_oracle(few_periods, DuffingParams{}), TooShort);
}

TEST(RegimeOracle, DefaultConstantsSeparateLowAndHighForcing) {
  const DuffingParams base{};
  const double period = base.forcing_period();
  RegimeOracleOptions opt;
  opt.warmup = 150 * period;
  const auto n = static_cast<std::size_t>(250 * period / 0.01);
  Rng rng(7);
  for (int k = 0; k < 4; ++k) {
    const double x0 = rng.uniform(-1, 1), v0 = rng.uniform(-0.5, 0.5);
    const auto low = regime_oracle(simulate_trajectory(0.3, x0, v0, n, 0.01, base), base.with_forcing(0.3), opt);
    const auto high = regime_oracle(simulate_trajectory(0.8, x0, v0, n, 0.01, base), base.with_forcing(0.8), opt);
    EXPECT_FALSE(low.chaotic) << "x0=" << x0 << " v0=" << v0;
    EXPECT_LE(low.distinct_points, 2u);
    EXPECT_TRUE(high.chaotic) << "x0=" << x0 << " v0=" << v0;
  }
}

TEST(Rng, SameSeedAndStreamRepeat) {
  Rng a(11, 3), b(11, 3), c(11, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    differs |= va != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformStaysInRangeAndBelowIsUnbiasedEnough) {
  Rng r(5);
  std::vector<int> hist(3, 0);
  for (int i = 0; i < 30000; ++i) {
    const double u = r.uniform(-1.0, 2.0);
    ASSERT_GE(u, -1.0);
    ASSERT_LT(u, 2.0);
    ++hist[r.below(3)];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 400);
}

TEST(Dataset, FullScaleCountsAndStratifiedSplit) {
  const Dataset ds = generate_dataset(DatasetConfig{}, 42);
  EXPECT_EQ(ds.trajectories.size(), 1500u);
  EXPECT_EQ(ds.indices(Split::Train).size(), 1200u);
  EXPECT_EQ(ds.indices(Split::Test).size(), 300u);
  std::map<double, int> test_per_regime;
  for (std::size_t i : ds.indices(Split::Test)) ++test_per_regime[ds.trajectories[i].f0];
  ASSERT_EQ(test_per_regime.size(), 3u);
  for (auto& [f0, n] : test_per_regime) EXPECT_EQ(n, 100) << f0;
  for (const auto& tr : ds.trajectories) {
    ASSERT_EQ(tr.size(), 1000u);
    EXPECT_GE(tr.states[0].x, -1.0);
    EXPECT_LT(tr.states[0].x, 1.0);
    EXPECT_GE(tr.states[0].v, -0.5);
    EXPECT_LT(tr.states[0].v, 0.5);
  }
}

TEST(Dataset, SingleTrajectoryGoesToTrain) {
  DatasetConfig cfg;
  cfg.regimes = {0.5};
  cfg.per_regime = 1;
  const Dataset ds = generate_dataset(cfg, 1);
  ASSERT_EQ(ds.trajectories.size(), 1u);
  EXPECT_EQ(ds.split[0], Split::Train);
  EXPECT_EQ(train_count(1, 0.8), 1u);
  EXPECT_EQ(train_count(5, 0.8), 4u);
  EXPECT_EQ(train_count(7, 0.8), 6u);
}

TEST(Dataset, SeedChangesSplitAndInitialConditions) {
  DatasetConfig cfg;
  cfg.per_regime = 10;
  cfg.samples = 20;
  const Dataset a = generate_dataset(cfg, 1), b = generate_dataset(cfg, 2);
  EXPECT_NE(a.trajectories[0].states[0].x, b.trajectories[0].states[0].x);
}

TEST(Dataset, FilesAreByteIdenticalForSameSeed) {
  test::TempDir dir;
  DatasetConfig cfg;
  cfg.per_regime = 6;
  cfg.samples = 50;
  write_dataset(generate_dataset(cfg, 9), dir.path / "a");
  write_dataset(generate_dataset(cfg, 9), dir.path / "b");
  for (const char* f : {"train.csv", "test.csv", "manifest.json"}) {
    EXPECT_EQ(test::read_file(dir.path / "a" / f), test::read_file(dir.path / "b" / f)) << f;
  }
}

TEST(Dataset, CsvLayoutAndRoundTrip) {
  test::TempDir dir;
  DatasetConfig cfg;
  cfg.per_regime = 5;
  cfg.samples = 30;
  const Dataset ds = generate_dataset(cfg, 3);
  write_dataset(ds, dir.path);
  std::ifstream in(dir.path / "train.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "traj_id,f0,step,t,x,v");
  std::string row;
  long prev_id = -1, prev_step = -1;
  while (std::getline(in, row)) {
    std::stringstream ss(row);
    std::string id, f0, step;
    std::getline(ss, id, ',');
    std::getline(ss, f0, ',');
    std::getline(ss, step, ',');
    const long i = std::stol(id), s = std::stol(step);
    EXPECT_TRUE(i > prev_id || (i == prev_id && s == prev_step + 1));
    prev_id = i;
    prev_step = s;
  }

  const Dataset back = read_dataset(dir.path);
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    EXPECT_EQ(back.split[k], ds.split[k]);
    EXPECT_EQ(back.trajectories[k].traj_id, ds.trajectories[k].traj_id);
    EXPECT_EQ(back.trajectories[k].f0, ds.trajectories[k].f0);
    for (std::size_t i = 0; i < ds.trajectories[k].size(); ++i) {
      EXPECT_EQ(back.trajectories[k].states[i].x, ds.trajectories[k].states[i].x);
      EXPECT_EQ(back.trajectories[k].states[i].v, ds.trajectories[k].states[i].v);
      EXPECT_EQ(back.trajectories[k].times[i], ds.trajectories[k].times[i]);
    }
  }
  EXPECT_EQ(back.config.duffing.omega, ds.config.duffing.omega);
  EXPECT_EQ(back.seed, 3u);
}

TEST(Dataset, ManifestRecordsConstants) {
  test::TempDir dir;
  DatasetConfig cfg;
  cfg.per_regime = 2;
  cfg.samples = 10;
  write_dataset(generate_dataset(cfg, 4), dir.path);
  const auto m = nlohmann::json::parse(test::read_file(dir.path / "manifest.json"));
  EXPECT_EQ(m["duffing"]["delta"].get<double>(), 0.3);
  EXPECT_EQ(m["duffing"]["omega"].get<double>(), 1.4);
  EXPECT_EQ(m["seed"].get<int>(), 4);
  EXPECT_EQ(m["counts"]["total"].get<int>(), 6);
}

TEST(Dataset, MissingManifestIsAnIoError) {
  test::TempDir dir;
  EXPECT_THROW(read_dataset(dir.path / "nope"), IoError);
}
