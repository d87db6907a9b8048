// SPDX-License-Identifier: Apache-2.0
#pragma once

// Second-order truncated Taylor arithmetic in one seed variable, generic over
// the carrier type: double (a DualScalar), a plain matrix, or a tape Var.
// Over a Var every rule below is itself recorded, so reverse mode can
// differentiate derivatives w.r.t. the seed (forward-over-reverse).

#include <type_traits>
#include <vector>

#include "tapinn/autodiff/plain.hpp"
#include "tapinn/autodiff/tape.hpp"

namespace tapinn::ad {

template <class T>
struct Jet {
  T v;   // value
  T d1;  // first derivative w.r.t. the seed
  T d2;  // second derivative w.r.t. the seed
};

using DualScalar = Jet<double>;

/// The seed variable itself: (t, 1, 0).
inline DualScalar seed(double t) { return {t, 1.0, 0.0}; }

/// A quantity independent of the seed: (c, 0, 0).
inline DualScalar lift(double c) { return {c, 0.0, 0.0}; }

/// A seed-independent carrier of like's shape with every entry equal to c.
template <class T>
T filled_like(const T& like, double c) {
  if constexpr (std::is_same_v<T, double>) {
    return c;
  } else {
    return constant_like(like, Mat::Constant(like.rows(), like.cols(), c));
  }
}

template <class T>
Jet<T> seed_like(const T& t) {
  if constexpr (std::is_same_v<T, double>) {
    return {t, 1.0, 0.0};
  } else {
    const Index r = t.rows(), c = t.cols();
    return {t, constant_like(t, Mat::Ones(r, c)), constant_like(t, Mat::Zero(r, c))};
  }
}

template <class T>
Jet<T> lift_like(const T& value) {
  if constexpr (std::is_same_v<T, double>) {
    return {value, 0.0, 0.0};
  } else {
    const Index r = value.rows(), c = value.cols();
    return {value, constant_like(value, Mat::Zero(r, c)), constant_like(value, Mat::Zero(r, c))};
  }
}

template <class T>
Jet<T> add(const Jet<T>& a, const Jet<T>& b) {
  return {add(a.v, b.v), add(a.d1, b.d1), add(a.d2, b.d2)};
}

template <class T>
Jet<T> sub(const Jet<T>& a, const Jet<T>& b) {
  return {sub(a.v, b.v), sub(a.d1, b.d1), sub(a.d2, b.d2)};
}

template <class T>
Jet<T> scale(const Jet<T>& a, double c) {
  return {scale(a.v, c), scale(a.d1, c), scale(a.d2, c)};
}

template <class T>
Jet<T> shift(const Jet<T>& a, double c) {
  return {shift(a.v, c), a.d1, a.d2};
}

template <class T>
Jet<T> neg(const Jet<T>& a) {
  return scale(a, -1.0);
}

/// (ab)'' = a''b + 2a'b' + ab''
template <class T>
Jet<T> cmul(const Jet<T>& a, const Jet<T>& b) {
  return {cmul(a.v, b.v), add(cmul(a.d1, b.v), cmul(a.v, b.d1)),
          add(add(cmul(a.d2, b.v), scale(cmul(a.d1, b.d1), 2.0)), cmul(a.v, b.d2))};
}

namespace detail {

// Chain rule for y = f(u): y' = f'(u) u', y'' = f'(u) u'' + f''(u) u'^2.
template <class T>
Jet<T> compose(const Jet<T>& u, T y, const T& fp, const T& fpp) {
  T d1 = cmul(fp, u.d1);
  T d2 = add(cmul(fp, u.d2), cmul(fpp, cmul(u.d1, u.d1)));
  return {std::move(y), std::move(d1), std::move(d2)};
}

}  // namespace detail

template <class T>
Jet<T> tanh(const Jet<T>& u) {
  T y = tanh(u.v);
  T fp = shift(neg(cmul(y, y)), 1.0);  // 1 - y^2
  T fpp = scale(cmul(y, fp), -2.0);    // -2 y (1 - y^2)
  return detail::compose(u, std::move(y), fp, fpp);
}

template <class T>
Jet<T> sigmoid(const Jet<T>& u) {
  T y = sigmoid(u.v);
  T fp = cmul(y, shift(neg(y), 1.0));                  // y (1 - y)
  T fpp = cmul(fp, shift(scale(y, -2.0), 1.0));        // y (1 - y)(1 - 2y)
  return detail::compose(u, std::move(y), fp, fpp);
}

template <class T>
Jet<T> sin(const Jet<T>& u) {
  T y = sin(u.v);
  T fp = cos(u.v);
  T fpp = neg(y);
  return detail::compose(u, std::move(y), fp, fpp);
}

template <class T>
Jet<T> cos(const Jet<T>& u) {
  T y = cos(u.v);
  T fp = neg(sin(u.v));
  T fpp = neg(y);
  return detail::compose(u, std::move(y), fp, fpp);
}

template <class T>
Jet<T> powi(const Jet<T>& u, int n) {
  if (n == 0) return lift_like(filled_like(u.v, 1.0));
  if (n == 1) return u;
  T y = powi(u.v, n);
  T fp = scale(powi(u.v, n - 1), static_cast<double>(n));
  T fpp = n == 2 ? filled_like(u.v, 2.0) : scale(powi(u.v, n - 2), static_cast<double>(n * (n - 1)));
  return detail::compose(u, std::move(y), fp, fpp);
}

/// 1/u: first derivative -u'/u^2, second 2u'^2/u^3 - u''/u^2.
template <class T>
Jet<T> reciprocal(const Jet<T>& u) {
  T y = cdiv(filled_like(u.v, 1.0), u.v);
  T y2 = cmul(y, y);
  T fp = neg(y2);
  T fpp = scale(cmul(y2, y), 2.0);
  return detail::compose(u, std::move(y), fp, fpp);
}

template <class T>
Jet<T> cdiv(const Jet<T>& a, const Jet<T>& b) {
  return cmul(a, reciprocal(b));
}

// ---- linear maps with seed-independent operands ----

template <class T>
Jet<T> matmul(const T& w, const Jet<T>& x) {
  return {matmul(w, x.v), matmul(w, x.d1), matmul(w, x.d2)};
}

template <class T>
Jet<T> add_bias(const Jet<T>& x, const T& b) {
  return {add_bias(x.v, b), x.d1, x.d2};
}

template <class T>
Jet<T> slice_rows(const Jet<T>& x, Index start, Index n) {
  return {slice_rows(x.v, start, n), slice_rows(x.d1, start, n), slice_rows(x.d2, start, n)};
}

template <class T>
Jet<T> slice_cols(const Jet<T>& x, Index start, Index n) {
  return {slice_cols(x.v, start, n), slice_cols(x.d1, start, n), slice_cols(x.d2, start, n)};
}

template <class T>
Jet<T> concat_cols(const std::vector<Jet<T>>& parts) {
  std::vector<T> v, d1, d2;
  for (const auto& p : parts) {
    v.push_back(p.v);
    d1.push_back(p.d1);
    d2.push_back(p.d2);
  }
  return {concat_cols(v), concat_cols(d1), concat_cols(d2)};
}

template <class T>
Jet<T> concat_rows(const std::vector<Jet<T>>& parts) {
  std::vector<T> v, d1, d2;
  for (const auto& p : parts) {
    v.push_back(p.v);
    d1.push_back(p.d1);
    d2.push_back(p.d2);
  }
  return {concat_rows(v), concat_rows(d1), concat_rows(d2)};
}

// Operators for the scalar DualScalar, which tests and small stubs use directly.
inline DualScalar operator+(const DualScalar& a, const DualScalar& b) { return add(a, b); }
inline DualScalar operator-(const DualScalar& a, const DualScalar& b) { return sub(a, b); }
inline DualScalar operator*(const DualScalar& a, const DualScalar& b) { return cmul(a, b); }
inline DualScalar operator/(const DualScalar& a, const DualScalar& b) { return cdiv(a, b); }
inline DualScalar operator*(double c, const DualScalar& a) { return scale(a, c); }

}  // namespace tapinn::ad
