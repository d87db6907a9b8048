// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tapinn/autodiff/plain.hpp"
#include "tapinn/errors.hpp"

namespace tapinn::ad {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a matrix-valued node on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool needs_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of matrix operations. Rebuilt for every evaluation.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Var constant(Mat value) { return push(std::move(value), false, {}); }
  Var variable(Mat value) { return push(std::move(value), true, {}); }

  /// Records an op result. The backward closure is dropped when no parent needs a gradient.
  Var record(Mat value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || p.needs_grad();
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  Var record(Mat value, const std::vector<Var>& parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || p.needs_grad();
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) with ones (the gradient of the sum of root's entries).
  void backward(const Var& root) {
    for (Node& n : nodes_) n.grad.resize(0, 0);
    Node& r = nodes_[root.id()];
    if (!r.needs_grad) return;
    r.grad = Mat::Ones(r.value.rows(), r.value.cols());
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
    }
  }

  /// Gradient after backward(); zeros when the node was not reached.
  Mat grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Mat value, bool needs, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backward), needs});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace detail

// ---- elementwise binary ----

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

inline Var cmul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "cmul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia = a.id(), ib = b.id()](Tape& t, const Mat& g) {
                            if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

inline Var cdiv(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "cdiv");
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {a, b},
                          [ia = a.id(), ib = b.id()](Tape& t, const Mat& g) {
                            const Mat& bv = t.value(ib);
                            if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseQuotient(bv));
                            if (t.needs_grad(ib)) {
                              t.accumulate(ib, -(g.array() * t.value(ia).array() / bv.array().square()).matrix());
                            }
                          });
}

// ---- scalar affine ----

inline Var scale(const Var& a, double c) {
  return a.tape()->record(a.value() * c, {a}, [ia = a.id(), c](Tape& t, const Mat& g) { t.accumulate(ia, g * c); });
}

inline Var shift(const Var& a, double c) {
  return a.tape()->record((a.value().array() + c).matrix(), {a},
                          [ia = a.id()](Tape& t, const Mat& g) { t.accumulate(ia, g); });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  return a.tape()->record(a.value() * b.value(), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Mat& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// x (r x c) plus column vector b (r x 1) broadcast over columns.
inline Var add_bias(const Var& x, const Var& b) {
  if (b.cols() != 1 || b.rows() != x.rows()) throw ShapeMismatch("add_bias: bias must be rows(x) x 1");
  Mat out = x.value().colwise() + b.value().col(0);
  return x.tape()->record(std::move(out), {x, b}, [ix = x.id(), ib = b.id()](Tape& t, const Mat& g) {
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

// ---- elementwise unary ----

inline Var tanh(const Var& a) {
  Mat y = tanh_kernel(a.value());
  Tape* tape = a.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(y), {a}, [ia = a.id(), out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    t.accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

inline Var sigmoid(const Var& a) {
  Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Tape* tape = a.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(y), {a}, [ia = a.id(), out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    t.accumulate(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

inline Var sin(const Var& a) {
  return a.tape()->record(a.value().array().sin().matrix(), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, (g.array() * t.value(ia).array().cos()).matrix());
  });
}

inline Var cos(const Var& a) {
  return a.tape()->record(a.value().array().cos().matrix(), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, (-g.array() * t.value(ia).array().sin()).matrix());
  });
}

inline Var powi(const Var& a, int n) {
  if (n == 0) return a.tape()->constant(Mat::Ones(a.rows(), a.cols()));
  if (n == 1) return a;
  Mat y = a.value().array().pow(static_cast<double>(n)).matrix();
  return a.tape()->record(std::move(y), {a}, [ia = a.id(), n](Tape& t, const Mat& g) {
    t.accumulate(ia, (g.array() * static_cast<double>(n) * t.value(ia).array().pow(static_cast<double>(n - 1))).matrix());
  });
}

inline Var square(const Var& a) { return cmul(a, a); }

/// max(0, a); the derivative at exactly 0 is taken as 0.
inline Var relu(const Var& a) {
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, (g.array() * (t.value(ia).array() > 0.0).cast<double>()).matrix());
  });
}

/// Elementwise square root; the derivative at 0 is taken as 0.
inline Var sqrt(const Var& a) {
  Mat y = a.value().array().sqrt().matrix();
  Tape* tape = a.tape();
  const std::size_t out_id = tape->size();
  return tape->record(std::move(y), {a}, [ia = a.id(), out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    t.accumulate(ia, (y.array() > 0.0).select(g.array() / (2.0 * y.array()), 0.0).matrix());
  });
}

// ---- reductions ----

inline Var sum(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    t.accumulate(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Column sums: (r x c) -> (1 x c).
inline Var col_sums(const Var& a) {
  return a.tape()->record(a.value().colwise().sum(), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    t.accumulate(ia, g.replicate(t.value(ia).rows(), 1));
  });
}

// ---- structural ----

inline Var slice_rows(const Var& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw ShapeMismatch("slice_rows: out of range");
  return a.tape()->record(a.value().middleRows(start, n), {a}, [ia = a.id(), start, n](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    Mat full = Mat::Zero(av.rows(), av.cols());
    full.middleRows(start, n) = g;
    t.accumulate(ia, full);
  });
}

inline Var slice_cols(const Var& a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw ShapeMismatch("slice_cols: out of range");
  return a.tape()->record(a.value().middleCols(start, n), {a}, [ia = a.id(), start, n](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    Mat full = Mat::Zero(av.rows(), av.cols());
    full.middleCols(start, n) = g;
    t.accumulate(ia, full);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [spans](Tape& t, const Mat& g) {
    Index r = 0;
    for (auto [id, n] : spans) {
      if (t.needs_grad(id)) t.accumulate(id, g.middleRows(r, n));
      r += n;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> spans;
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    c += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [spans](Tape& t, const Mat& g) {
    Index c = 0;
    for (auto [id, n] : spans) {
      if (t.needs_grad(id)) t.accumulate(id, g.middleCols(c, n));
      c += n;
    }
  });
}

/// Repeats every column `times` times in place: [a b] -> [a a a b b b].
inline Var repeat_cols(const Var& a, Index times) {
  const Mat& av = a.value();
  Mat out(av.rows(), av.cols() * times);
  for (Index j = 0; j < av.cols(); ++j) out.middleCols(j * times, times) = av.col(j).replicate(1, times);
  return a.tape()->record(std::move(out), {a}, [ia = a.id(), times](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    Mat acc(av.rows(), av.cols());
    for (Index j = 0; j < av.cols(); ++j) acc.col(j) = g.middleCols(j * times, times).rowwise().sum();
    t.accumulate(ia, acc);
  });
}

inline Var gather_cols(const Var& a, const std::vector<Index>& cols) {
  const Mat& av = a.value();
  Mat out(av.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = av.col(cols[k]);
  return a.tape()->record(std::move(out), {a}, [ia = a.id(), cols](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    Mat acc = Mat::Zero(av.rows(), av.cols());
    for (std::size_t k = 0; k < cols.size(); ++k) acc.col(cols[k]) += g.col(static_cast<Index>(k));
    t.accumulate(ia, acc);
  });
}

/// Column-major reshape.
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw ShapeMismatch("reshape: element count differs");
  Mat out = a.value().reshaped(rows, cols);
  return a.tape()->record(std::move(out), {a}, [ia = a.id()](Tape& t, const Mat& g) {
    const Mat& av = t.value(ia);
    t.accumulate(ia, g.reshaped(av.rows(), av.cols()));
  });
}

/// A constant on the same tape as `like`.
inline Var constant_like(const Var& like, Mat value) { return like.tape()->constant(std::move(value)); }

}  // namespace tapinn::ad
