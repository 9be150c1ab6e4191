#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every intermediate value together with a closure that
// pushes the node's gradient back into its inputs. Var is a cheap handle
// (tape pointer + node index). Nodes that do not depend on any
// gradient-tracking leaf never allocate a gradient and their closures are
// skipped during the backward sweep.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <utility>
#include <vector>

#include "phinet/errors.hpp"

namespace phinet {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace ad {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Mat<Scalar>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
  Scalar item() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  using Backward = std::function<void(Tape&, int)>;

  Var<Scalar> constant(Matrix value) { return push(std::move(value), false, {}); }
  Var<Scalar> variable(Matrix value) { return push(std::move(value), true, {}); }

  // Records an op node. The node tracks gradients iff any input does.
  Var<Scalar> record(Matrix value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || requires_grad(in.id);
    return push(std::move(value), tracked, tracked ? std::move(backward) : Backward{});
  }
  Var<Scalar> record(Matrix value, const std::vector<Var<Scalar>>& inputs, Backward backward) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || requires_grad(in.id);
    return push(std::move(value), tracked, tracked ? std::move(backward) : Backward{});
  }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }

  // Gradient of `id`, or a zero matrix of its shape when none arrived.
  Matrix grad_or_zero(int id) const {
    if (has_grad(id)) return nodes_[id].grad;
    return Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Seeds d(root)/d(root) = `seed` (ones by default) and sweeps backwards.
  void backward(Var<Scalar> root) {
    backward(root, Matrix::Ones(value(root.id).rows(), value(root.id).cols()));
  }
  void backward(Var<Scalar> root, const Matrix& seed) {
    accumulate(root.id, seed);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<Scalar> push(Matrix value, bool tracked, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward), tracked});
    return Var<Scalar>{this, static_cast<int>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() * b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

// aᵀ·b without materialising the transpose.
template <typename Scalar>
Var<Scalar> matmul_tn(Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows()) throw ConfigError("matmul_tn: inner dimensions differ");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value().transpose() * b.value(), {a, b},
                        [ia, ib](Tape<Scalar>& t, int self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(ia)) t.accumulate(ia, t.value(ib) * g.transpose());
                          if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia) * g);
                        });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  const int ia = a.id;
  return a.tape->record(a.value().transpose(), {a}, [ia](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("add: shape mismatch");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("sub: shape mismatch");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> a) {
  const int ia = a.id;
  return a.tape->record(s * a.value(), {a}, [ia, s](Tape<Scalar>& t, int self) {
    t.accumulate(ia, s * t.grad(self));
  });
}

// a + b·1ᵀ: adds the column vector `b` to every column of `a`.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> a, Var<Scalar> b) {
  if (b.cols() != 1 || b.rows() != a.rows()) throw ConfigError("add_bias: bias shape mismatch");
  const int ia = a.id, ib = b.id;
  Mat<Scalar> out = a.value().colwise() + b.value().col(0);
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self));
    if (t.requires_grad(ib)) t.accumulate(ib, t.grad(self).rowwise().sum());
  });
}

// W·x + b applied to every column of x.
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> weight, Var<Scalar> bias, Var<Scalar> x) {
  return add_bias(matmul(weight, x), bias);
}

// ---------------------------------------------------------------------------
// Slicing and concatenation

template <typename Scalar>
Var<Scalar> cols(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw ConfigError("cols: slice out of range");
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(a.value().middleCols(start, count), {a},
                        [ia, start, count, r, c](Tape<Scalar>& t, int self) {
                          Mat<Scalar> g = Mat<Scalar>::Zero(r, c);
                          g.middleCols(start, count) = t.grad(self);
                          t.accumulate(ia, g);
                        });
}

template <typename Scalar>
Var<Scalar> rows(Var<Scalar> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw ConfigError("rows: slice out of range");
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(a.value().middleRows(start, count), {a},
                        [ia, start, count, r, c](Tape<Scalar>& t, int self) {
                          Mat<Scalar> g = Mat<Scalar>::Zero(r, c);
                          g.middleRows(start, count) = t.grad(self);
                          t.accumulate(ia, g);
                        });
}

template <typename Scalar>
Var<Scalar> hcat(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ConfigError("hcat: no inputs");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ConfigError("hcat: row counts differ");
    total += p.cols();
  }
  Mat<Scalar> out(r, total);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [spans](Tape<Scalar>& t, int self) {
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, t.grad(self).middleCols(start, t.value(id).cols()));
  });
}

template <typename Scalar>
Var<Scalar> vcat(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ConfigError("vcat: no inputs");
  const Eigen::Index c = parts.front().cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ConfigError("vcat: column counts differ");
    total += p.rows();
  }
  Mat<Scalar> out(total, c);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.rows();
  }
  return parts.front().tape->record(std::move(out), parts, [spans](Tape<Scalar>& t, int self) {
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, t.grad(self).middleRows(start, t.value(id).rows()));
  });
}

// Column-major reshape (same element order).
template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Eigen::Index r, Eigen::Index c) {
  if (r * c != a.value().size()) throw ConfigError("reshape: element count differs");
  const int ia = a.id;
  const Eigen::Index ar = a.rows(), ac = a.cols();
  Mat<Scalar> out = Eigen::Map<const Mat<Scalar>>(a.value().data(), r, c);
  return a.tape->record(std::move(out), {a}, [ia, ar, ac](Tape<Scalar>& t, int self) {
    t.accumulate(ia, Eigen::Map<const Mat<Scalar>>(t.grad(self).data(), ar, ac));
  });
}

// Same value, no gradient path.
template <typename Scalar>
Var<Scalar> detach(Var<Scalar> a) {
  return a.tape->constant(a.value());
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  const int ia = a.id;
  return a.tape->record(a.value().cwiseMax(Scalar(0)), {a}, [ia](Tape<Scalar>& t, int self) {
    t.accumulate(ia, (t.value(ia).array() > Scalar(0)).select(t.grad(self).array(), Scalar(0)).matrix());
  });
}

// Exact (erf) GELU.
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  const int ia = a.id;
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Mat<Scalar> out = a.value().unaryExpr(
      [inv_sqrt2](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2)); });
  return a.tape->record(std::move(out), {a}, [ia, inv_sqrt2](Tape<Scalar>& t, int self) {
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Mat<Scalar> d = t.value(ia).unaryExpr([&](Scalar x) {
      return Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt2pi * std::exp(Scalar(-0.5) * x * x);
    });
    t.accumulate(ia, t.grad(self).cwiseProduct(d));
  });
}

// Softmax down each column.
template <typename Scalar>
Mat<Scalar> softmax_cols_value(const Mat<Scalar>& x) {
  Mat<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Scalar mx = x.col(j).maxCoeff();
    out.col(j) = (x.col(j).array() - mx).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> log_softmax_cols_value(const Mat<Scalar>& x) {
  Mat<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Scalar mx = x.col(j).maxCoeff();
    const Scalar lse = mx + std::log((x.col(j).array() - mx).exp().sum());
    out.col(j) = (x.col(j).array() - lse).matrix();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax_cols(Var<Scalar> a) {
  const int ia = a.id;
  Mat<Scalar> out = softmax_cols_value<Scalar>(a.value());
  return a.tape->record(std::move(out), {a}, [ia](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& p = t.value(self);
    const Mat<Scalar>& g = t.grad(self);
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dots = g.cwiseProduct(p).colwise().sum();
    Mat<Scalar> gi = p.cwiseProduct(g - dots.replicate(p.rows(), 1));
    t.accumulate(ia, gi);
  });
}

// Layer normalisation of each column over its rows, with per-row gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-6)) {
  const Eigen::Index n = x.rows();
  if (gain.rows() != n || bias.rows() != n || gain.cols() != 1 || bias.cols() != 1)
    throw ConfigError("layer_norm: gain/bias shape mismatch");
  const Mat<Scalar>& xv = x.value();
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = xv.colwise().mean();
  Mat<Scalar> centered = xv - mean.replicate(n, 1);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std =
      ((centered.array().square().colwise().sum() / Scalar(n)) + eps).rsqrt();
  Mat<Scalar> xhat = centered.cwiseProduct(inv_std.replicate(n, 1));
  Mat<Scalar> out = (xhat.array().colwise() * gain.value().col(0).array()).matrix();
  out.colwise() += bias.value().col(0);
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t, int self) {
        const Mat<Scalar>& g = t.grad(self);
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).rowwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.rowwise().sum());
        if (t.requires_grad(ix)) {
          Mat<Scalar> gx = (g.array().colwise() * t.value(ig).col(0).array()).matrix();
          Eigen::Matrix<Scalar, 1, Eigen::Dynamic> m1 = gx.colwise().mean();
          Eigen::Matrix<Scalar, 1, Eigen::Dynamic> m2 = gx.cwiseProduct(xhat).colwise().mean();
          Mat<Scalar> dx = gx - m1.replicate(n, 1) - xhat.cwiseProduct(m2.replicate(n, 1));
          t.accumulate(ix, dx.cwiseProduct(inv_std.replicate(n, 1)));
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [ia, r, c](Tape<Scalar>& t, int self) {
    t.accumulate(ia, Mat<Scalar>::Constant(r, c, t.grad(self)(0, 0)));
  });
}

// Σ (a − b)² as a 1×1 node.
template <typename Scalar>
Var<Scalar> squared_distance(Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError("squared_distance: shape mismatch");
  Mat<Scalar> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm();
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape<Scalar>& t, int self) {
    const Scalar g = t.grad(self)(0, 0);
    Mat<Scalar> d = Scalar(2) * g * (t.value(ia) - t.value(ib));
    if (t.requires_grad(ia)) t.accumulate(ia, d);
    if (t.requires_grad(ib)) t.accumulate(ib, -d);
  });
}

// Weighted sum Σ w ⊙ a against a constant weight matrix; the usual scalar probe.
template <typename Scalar>
Var<Scalar> dot(Var<Scalar> a, const Mat<Scalar>& w) {
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw ConfigError("dot: shape mismatch");
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, w](Tape<Scalar>& t, int self) {
    t.accumulate(ia, t.grad(self)(0, 0) * w);
  });
}

}  // namespace ad
}  // namespace phinet
