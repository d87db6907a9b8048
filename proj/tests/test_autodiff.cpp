// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "tapinn/autodiff/grad.hpp"
#include "tapinn/autodiff/jet.hpp"
#include "tapinn/neural.hpp"
#include "tapinn/params.hpp"
#include "test_util.hpp"

using namespace tapinn;
using ad::Jet;
using ad::Tape;
using ad::Var;
using test::LossFn;

namespace {

// Weighted sum so every output entry carries a distinct cotangent.
Var weigh(const Var& out, std::uint64_t salt = 1) {
  Rng rng(1234, salt);
  return ad::sum(ad::cmul(out, out.tape()->constant(test::random_mat(rng, out.rows(), out.cols()))));
}

struct OpCase {
  const char* name;
  std::vector<Mat> inputs;
  LossFn fn;
};

std::vector<OpCase> op_cases() {
  Rng r(99);
  auto m = [&](Index a, Index b, double lo = -1.0, double hi = 1.0) { return test::random_mat(r, a, b, lo, hi); };
  using V = const std::vector<Var>&;
  std::vector<OpCase> cases;
  cases.push_back({"add", {m(3, 4), m(3, 4)}, [](Tape&, V p) { return weigh(ad::add(p[0], p[1])); }});
  cases.push_back({"sub", {m(3, 4), m(3, 4)}, [](Tape&, V p) { return weigh(ad::sub(p[0], p[1])); }});
  cases.push_back({"cmul", {m(3, 4), m(3, 4)}, [](Tape&, V p) { return weigh(ad::cmul(p[0], p[1])); }});
  cases.push_back({"cdiv", {m(3, 4), m(3, 4, 0.5, 2.0)}, [](Tape&, V p) { return weigh(ad::cdiv(p[0], p[1])); }});
  cases.push_back({"scale_shift_neg", {m(2, 5)},
                   [](Tape&, V p) { return weigh(ad::neg(ad::shift(ad::scale(p[0], 2.5), -0.3))); }});
  cases.push_back({"matmul", {m(3, 4), m(4, 2)}, [](Tape&, V p) { return weigh(ad::matmul(p[0], p[1])); }});
  cases.push_back({"add_bias", {m(3, 4), m(3, 1)}, [](Tape&, V p) { return weigh(ad::add_bias(p[0], p[1])); }});
  cases.push_back({"tanh", {m(3, 4, -2, 2)}, [](Tape&, V p) { return weigh(ad::tanh(p[0])); }});
  cases.push_back({"sigmoid", {m(3, 4, -3, 3)}, [](Tape&, V p) { return weigh(ad::sigmoid(p[0])); }});
  cases.push_back({"sin", {m(3, 4, -3, 3)}, [](Tape&, V p) { return weigh(ad::sin(p[0])); }});
  cases.push_back({"cos", {m(3, 4, -3, 3)}, [](Tape&, V p) { return weigh(ad::cos(p[0])); }});
  cases.push_back({"powi3", {m(3, 4)}, [](Tape&, V p) { return weigh(ad::powi(p[0], 3)); }});
  cases.push_back({"square", {m(3, 4)}, [](Tape&, V p) { return weigh(ad::square(p[0])); }});
  cases.push_back({"relu", {m(3, 4, 0.1, 1.0) - Mat(Mat::Constant(3, 4, 0.55))},
                   [](Tape&, V p) { return weigh(ad::relu(p[0])); }});
  cases.push_back({"sqrt", {m(3, 4, 0.2, 2.0)}, [](Tape&, V p) { return weigh(ad::sqrt(p[0])); }});
  cases.push_back({"mean", {m(3, 4)}, [](Tape&, V p) { return ad::scale(ad::mean(ad::square(p[0])), 3.0); }});
  cases.push_back({"col_sums", {m(3, 4)}, [](Tape&, V p) { return weigh(ad::col_sums(p[0])); }});
  cases.push_back({"slices", {m(5, 6)},
                   [](Tape&, V p) { return weigh(ad::slice_cols(ad::slice_rows(p[0], 1, 3), 2, 3)); }});
  cases.push_back({"concat", {m(2, 3), m(1, 3), m(3, 2)}, [](Tape&, V p) {
                     return weigh(ad::concat_cols({ad::concat_rows({p[0], p[1]}), p[2]}));
                   }});
  cases.push_back({"repeat_cols", {m(3, 2)}, [](Tape&, V p) { return weigh(ad::repeat_cols(p[0], 3)); }});
  cases.push_back({"gather_cols", {m(3, 4)},
                   [](Tape&, V p) { return weigh(ad::gather_cols(p[0], {3, 0, 0, 2, 3})); }});
  cases.push_back({"reshape", {m(6, 2)}, [](Tape&, V p) { return weigh(ad::reshape(p[0], 3, 4)); }});
  return cases;
}

// A small generator-style network of t with parameters (W1, b1, W2, b2).
template <class T, class X>
X tiny_net(const std::vector<T>& p, const X& t) {
  Layers<T> layers{{p[0], p[1]}, {p[2], p[3]}};
  return mlp_forward(layers, t);
}

std::vector<Mat> tiny_params(std::uint64_t seed) {
  Rng r(seed);
  return {test::random_mat(r, 6, 1, -1.5, 1.5), test::random_mat(r, 6, 1), test::random_mat(r, 1, 6),
          test::random_mat(r, 1, 1)};
}

}  // namespace

TEST(Grad, QuadraticExample) {
  const Mat p = (Mat(3, 1) << 1, 2, 3).finished();
  const auto g = ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(v[0])); },
                          std::vector<Mat>{p});
  EXPECT_DOUBLE_EQ(g.loss, 14.0);
  EXPECT_DOUBLE_EQ(g.grads[0](0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.grads[0](1, 0), 4.0);
  EXPECT_DOUBLE_EQ(g.grads[0](2, 0), 6.0);
}

TEST(Grad, ConstantLossHasZeroGradient) {
  Rng r(1);
  const auto g = ad::grad([](Tape& t, const std::vector<Var>&) { return t.constant(Mat(Mat::Constant(1, 1, 4.0))); },
                          std::vector<Mat>{test::random_mat(r, 2, 3)});
  EXPECT_EQ(g.loss, 4.0);
  EXPECT_TRUE(g.grads[0].isZero(0.0));
  EXPECT_EQ(g.grads[0].rows(), 2);
}

TEST(Grad, EveryPrimitiveMatchesCentralDifferences) {
  for (const auto& c : op_cases()) {
    EXPECT_LT(test::max_fd_error(c.fn, c.inputs), 1e-5) << c.name;
  }
}

TEST(Grad, ReluAndSqrtDerivativesAtZeroAreZero) {
  const Mat z = Mat(Mat::Zero(1, 3));
  auto g = ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::relu(v[0])); }, std::vector<Mat>{z});
  EXPECT_TRUE(g.grads[0].isZero(0.0));
  g = ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::sqrt(v[0])); }, std::vector<Mat>{z});
  EXPECT_TRUE(g.grads[0].allFinite());
  EXPECT_TRUE(g.grads[0].isZero(0.0));
}

TEST(Grad, AccumulationIsLinear) {
  Rng r(3);
  const std::vector<Mat> p{test::random_mat(r, 4, 3), test::random_mat(r, 3, 1)};
  auto l1 = [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::tanh(ad::add_bias(v[0], ad::matmul(v[0], v[1])))); };
  auto l2 = [](Tape&, const std::vector<Var>& v) { return ad::mean(ad::powi(ad::matmul(v[0], v[1]), 3)); };
  const double c = -2.75;
  const auto g1 = ad::grad(l1, p), g2 = ad::grad(l2, p);
  const auto g12 = ad::grad([&](Tape& t, const std::vector<Var>& v) { return ad::add(l1(t, v), ad::scale(l2(t, v), c)); }, p);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Mat expect = g1.grads[k] + c * g2.grads[k];
    EXPECT_LT((g12.grads[k] - expect).cwiseAbs().maxCoeff(), 1e-14 * (1.0 + expect.cwiseAbs().maxCoeff()));
  }
}

TEST(Grad, MaskedArraysAreConstants) {
  Rng r(4);
  const std::vector<Mat> p{test::random_mat(r, 2, 2), test::random_mat(r, 2, 2)};
  const auto g = ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::cmul(v[0], v[1])); }, p,
                          std::vector<bool>{true, false});
  EXPECT_TRUE(g.grads[0].isApprox(p[1]));
  EXPECT_TRUE(g.grads[1].isZero(0.0));
}

TEST(Grad, UnreachedArrayGetsZeros) {
  const auto g = ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); },
                          std::vector<Mat>{Mat(Mat::Ones(2, 2)), Mat(Mat::Ones(3, 1))});
  EXPECT_TRUE(g.grads[1].isZero(0.0));
  EXPECT_EQ(g.grads[1].rows(), 3);
}

TEST(Grad, ShapeErrorsAndNonFiniteLoss) {
  EXPECT_THROW(ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::add(v[0], v[1])); },
                        std::vector<Mat>{Mat(Mat::Ones(2, 2)), Mat(Mat::Ones(3, 2))}),
               ShapeMismatch);
  EXPECT_THROW(ad::grad([](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); },
                        std::vector<Mat>{Mat(Mat::Ones(1, 2)), Mat(Mat::Ones(3, 1))}),
               ShapeMismatch);
  EXPECT_THROW(ad::grad([](Tape&, const std::vector<Var>& v) { return v[0]; }, std::vector<Mat>{Mat(Mat::Ones(2, 1))}),
               ShapeMismatch);
  EXPECT_THROW(ad::grad([](Tape&, const std::vector<Var>& v) { return ad::sum(ad::cdiv(v[0], v[1])); },
                        std::vector<Mat>{Mat(Mat::Ones(1, 1)), Mat(Mat::Zero(1, 1))}),
               NonFinite);
}

TEST(Jet, UnitFunctionsMatchAnalyticDerivatives) {
  using ad::DualScalar;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  for (double t : {-1.3, -0.2, 0.0, 0.4, 1.7}) {
    const DualScalar s = ad::seed(t);

    const DualScalar th = ad::tanh(s);
    const double y = std::tanh(t);
    EXPECT_LT(rel(th.v, y), 1e-12);
    EXPECT_LT(rel(th.d1, 1 - y * y), 1e-12);
    EXPECT_LT(rel(th.d2, -2 * y * (1 - y * y)), 1e-12);

    const DualScalar sg = ad::sigmoid(s);
    const double q = 1 / (1 + std::exp(-t));
    EXPECT_LT(rel(sg.d1, q * (1 - q)), 1e-12);
    EXPECT_LT(rel(sg.d2, q * (1 - q) * (1 - 2 * q)), 1e-12);

    const DualScalar cube = ad::powi(s, 3);
    EXPECT_LT(rel(cube.v, t * t * t), 1e-12);
    EXPECT_LT(rel(cube.d1, 3 * t * t), 1e-12);
    EXPECT_LT(rel(cube.d2, 6 * t), 1e-12);

    const DualScalar c = ad::cos(s);
    EXPECT_LT(rel(c.d1, -std::sin(t)), 1e-12);
    EXPECT_LT(rel(c.d2, -std::cos(t)), 1e-12);

    const DualScalar prod = s * ad::sin(s);
    EXPECT_LT(rel(prod.d1, std::sin(t) + t * std::cos(t)), 1e-12);
    EXPECT_LT(rel(prod.d2, 2 * std::cos(t) - t * std::sin(t)), 1e-12);

    const DualScalar sum = s + 2.0 * ad::cos(s) - ad::lift(0.5);
    EXPECT_LT(rel(sum.d1, 1 - 2 * std::sin(t)), 1e-12);
    EXPECT_LT(rel(sum.d2, -2 * std::cos(t)), 1e-12);

    const DualScalar comp = ad::tanh(s * s);
    const double u = std::tanh(t * t);
    EXPECT_LT(rel(comp.d1, (1 - u * u) * 2 * t), 1e-12);
    EXPECT_LT(rel(comp.d2, -2 * u * (1 - u * u) * 4 * t * t + (1 - u * u) * 2), 1e-12);

    const DualScalar quo = ad::lift(1.0) / (ad::lift(1.0) + s * s);
    const double den = 1 + t * t;
    EXPECT_LT(rel(quo.d1, -2 * t / (den * den)), 1e-12);
    EXPECT_LT(rel(quo.d2, (6 * t * t - 2) / (den * den * den)), 1e-12);
  }
}

TEST(Jet, MatrixCarrierAgreesWithScalarCarrier) {
  Rng r(8);
  const std::vector<Mat> p = tiny_params(8);
  const Mat t = test::random_mat(r, 1, 5, 0.0, 2.0);
  const Jet<Mat> batch = tiny_net(p, ad::seed_like(t));
  for (Index k = 0; k < t.cols(); ++k) {
    const Jet<Mat> one = tiny_net(p, ad::seed_like(Mat(Mat::Constant(1, 1, t(0, k)))));
    EXPECT_DOUBLE_EQ(batch.v(0, k), one.v(0, 0));
    EXPECT_DOUBLE_EQ(batch.d1(0, k), one.d1(0, 0));
    EXPECT_DOUBLE_EQ(batch.d2(0, k), one.d2(0, 0));
  }
}

TEST(TimeDerivatives, IdentityAndSquareStubs) {
  // one linear layer with weight 1 and bias 0 is G(t) = t
  const Layers<Mat> identity{{Mat(Mat::Ones(1, 1)), Mat(Mat::Zero(1, 1))}};
  for (double t : {0.0, 0.7, 3.0}) {
    const Jet<Mat> x = ad::time_derivatives([&](const Jet<Mat>& s) { return mlp_forward(identity, s); },
                                            Mat(Mat::Constant(1, 1, t)));
    EXPECT_DOUBLE_EQ(x.v(0, 0), t);
    EXPECT_DOUBLE_EQ(x.d1(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(x.d2(0, 0), 0.0);
    const Jet<Mat> sq = ad::time_derivatives([&](const Jet<Mat>& s) { return ad::powi(mlp_forward(identity, s), 2); },
                                             Mat(Mat::Constant(1, 1, t)));
    EXPECT_DOUBLE_EQ(sq.v(0, 0), t * t);
    EXPECT_DOUBLE_EQ(sq.d1(0, 0), 2 * t);
    EXPECT_DOUBLE_EQ(sq.d2(0, 0), 2.0);
  }
}

TEST(TimeDerivatives, GeneratorMatchesFiniteDifferencesInTime) {
  const ModelParams model = init_params(ModelKind::Tapinn, 5, ArchitectureDims{});
  const auto layers = mlp_layers(model.arrays, 5, 3);
  Rng r(21);
  const Mat z = test::random_mat(r, 8, 1);
  auto x_at = [&](double t) {
    return generator_forward(layers, Mat(Mat::Constant(1, 1, t)), z, model.dims.horizon)(0, 0);
  };
  const double h = 1e-4;
  for (int k = 0; k < 6; ++k) {
    const double t = r.uniform(0.5, 9.5);
    const Jet<Mat> x = generator_forward(layers, ad::seed_like(Mat(Mat::Constant(1, 1, t))), z, model.dims.horizon);
    const double fd1 = (x_at(t + h) - x_at(t - h)) / (2 * h);
    const double fd2 = (x_at(t + h) - 2 * x_at(t) + x_at(t - h)) / (h * h);
    EXPECT_LT(std::abs(x.d1(0, 0) - fd1) / std::max(std::abs(fd1), 1e-3), 1e-4);
    EXPECT_LT(std::abs(x.d2(0, 0) - fd2) / std::max(std::abs(fd2), 1e-3), 1e-4);
  }
}

TEST(TimeDerivatives, ParameterGradientThroughSecondDerivative) {
  Rng r(31);
  const Mat t = test::random_mat(r, 1, 4, 0.0, 2.0);
  const LossFn loss = [t](Tape& tape, const std::vector<Var>& p) {
    const Jet<Var> x = tiny_net(p, ad::seed_like(tape.constant(t)));
    return ad::mean(ad::square(x.d2));
  };
  EXPECT_LT(test::max_fd_error(loss, tiny_params(31)), 1e-4);
}

TEST(TimeDerivatives, ParameterGradientOfFullResidualThroughLstmEncoder) {
  ArchitectureDims d;
  d.window_len = 4;
  d.lstm_hidden = 3;
  d.latent_dim = 2;
  d.generator_hidden = {5};
  const ModelParams model = init_params(ModelKind::Tapinn, 2, d);
  Rng r(2);
  std::vector<ObservationWindow> w(2);
  for (auto& win : w) win.values = test::random_mat(r, 2, 4);
  const Mat t = test::random_mat(r, 1, 6, 0.0, 10.0);
  const LossFn loss = [&](Tape& tape, const std::vector<Var>& p) {
    std::vector<Var> steps;
    for (const Mat& s : window_steps(w)) steps.push_back(tape.constant(s));
    const Var z = encoder_forward(steps, encoder_weights(p));
    const Jet<Var> x = solution_forward(model, p, z, ad::seed_like(tape.constant(t)), 3);
    return ad::mean(ad::square(ad::add(ad::add(x.d2, ad::scale(x.d1, 0.3)), ad::powi(x.v, 3))));
  };
  EXPECT_LT(test::max_fd_error(loss, model.arrays), 1e-4);
}
