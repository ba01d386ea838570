#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Tape records every operation applied to Vars. Parameters enter the tape
// as leaves bound to a Parameter; backward() accumulates into
// Parameter::grad. Constants (and anything produced by detach()) never
// receive gradient, so stop-gradient is exact rather than approximate.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tracer/nn/tensor.hpp"

namespace tracer::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false); }

  // Differentiable leaf that is not a parameter (PGD perturbations, probes).
  Var input(Tensor value) { return push(std::move(value), true); }

  Var param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external != nullptr ? *n.external : n.value;
  }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

  // Gradient of the last backward() with respect to a node; zero if the
  // node was not reached.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.index()];
    if (n.grad.size() == 0) return Tensor::Zero(value(v.index()).rows(), value(v.index()).cols());
    return n.grad;
  }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
    Var out = push(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(fn);
    return out;
  }

  void accumulate(std::size_t i, const Tensor& contribution) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  void accumulate(std::size_t i, Tensor&& contribution) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = std::move(contribution);
    } else {
      n.grad += contribution;
    }
  }

  // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. Parameter
  // leaves add into Parameter::grad.
  void backward(const Var& loss) {
    const Tensor& lv = value(loss.index());
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward: loss must be 1x1, got " + shape_string(lv));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.index()].grad = Tensor::Ones(1, 1);
    for (std::size_t k = loss.index() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.grad.size() == 0) continue;
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      } else if (n.backward) {
        Tensor upstream = std::move(n.grad);
        n.backward(*this, upstream);
        n.grad = std::move(upstream);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(index_); }

// Throws NonFiniteError naming the first parameter with a NaN/inf gradient.
template <typename ParamRange>
void check_finite_grads(const ParamRange& params) {
  for (const Parameter* p : params) {
    if (!p->grad.allFinite()) throw NonFiniteError("non-finite gradient in parameter '" + p->name + "'");
  }
}

// ---------------------------------------------------------------------------
// Operations

inline Var detach(const Var& x) { return x.tape().constant(x.value()); }

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.value()) + " * " +
                         shape_string(b.value()));
  }
  Tape& t = a.tape();
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

// a (m x n) + bias (1 x n) broadcast over rows.
inline Var add_bias(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.value()) + " for input " +
                         shape_string(a.value()));
  }
  Tape& t = a.tape();
  const std::size_t ia = a.index(), ib = bias.index();
  Tensor out = a.value();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g.colwise().sum());
  });
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

// Element-wise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(a.value().cwiseProduct(b.value()), {ia, ib},
                         [ia, ib](Tape& tp, const Tensor& g) {
                           if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                           if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                         });
}

inline Var div(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "div");
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(a.value().cwiseQuotient(b.value()), {ia, ib},
                         [ia, ib](Tape& tp, const Tensor& g) {
                           const Tensor& bv = tp.value(ib);
                           if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseQuotient(bv));
                           if (tp.requires_grad(ib)) {
                             Tensor d = -g.cwiseProduct(tp.value(ia)).cwiseQuotient(bv.cwiseProduct(bv));
                             tp.accumulate(ib, d);
                           }
                         });
}

inline Var scale(const Var& a, double c) {
  const std::size_t ia = a.index();
  return a.tape().record(a.value() * c, {ia}, [ia, c](Tape& tp, const Tensor& g) { tp.accumulate(ia, g * c); });
}

inline Var add_scalar(const Var& a, double c) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array() + c;
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) { tp.accumulate(ia, g); });
}

// a (m x n) scaled row-wise by a constant row (1 x n). Used for input masks.
inline Var mul_row_const(const Var& a, const RowVector& row) {
  if (row.cols() != a.cols()) throw DimensionError("mul_row_const: width mismatch");
  const std::size_t ia = a.index();
  Tensor out = a.value().array().rowwise() * row.array();
  return a.tape().record(std::move(out), {ia}, [ia, row](Tape& tp, const Tensor& g) {
    Tensor d = g.array().rowwise() * row.array();
    tp.accumulate(ia, d);
  });
}

// a (m x n) scaled per row by c (m x 1).
inline Var mul_col(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) {
    throw DimensionError("mul_col: column " + shape_string(c.value()) + " for " + shape_string(a.value()));
  }
  const std::size_t ia = a.index(), ic = c.index();
  Tensor out = a.value().array().colwise() * c.value().col(0).array();
  return a.tape().record(std::move(out), {ia, ic}, [ia, ic](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) {
      Tensor d = g.array().colwise() * tp.value(ic).col(0).array();
      tp.accumulate(ia, d);
    }
    if (tp.requires_grad(ic)) {
      Tensor d = g.cwiseProduct(tp.value(ia)).rowwise().sum();
      tp.accumulate(ic, d);
    }
  });
}

inline Var relu(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor d = (tp.value(ia).array() > 0.0).select(g, 0.0);
    tp.accumulate(ia, d);
  });
}

inline Var tanh(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array().tanh();
  Tensor saved = out;
  return a.tape().record(std::move(out), {ia}, [ia, saved](Tape& tp, const Tensor& g) {
    Tensor d = g.array() * (1.0 - saved.array().square());
    tp.accumulate(ia, d);
  });
}

inline Var exp(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array().exp();
  Tensor saved = out;
  return a.tape().record(std::move(out), {ia}, [ia, saved](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g.cwiseProduct(saved));
  });
}

inline Var log(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array().log();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g.cwiseQuotient(tp.value(ia)));
  });
}

inline Var square(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array().square();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor d = 2.0 * g.cwiseProduct(tp.value(ia));
    tp.accumulate(ia, d);
  });
}

inline Var sqrt(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().array().sqrt();
  Tensor saved = out;
  return a.tape().record(std::move(out), {ia}, [ia, saved](Tape& tp, const Tensor& g) {
    Tensor d = 0.5 * g.array() / saved.array();
    tp.accumulate(ia, d);
  });
}

// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().unaryExpr([](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor sig = tp.value(ia).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    tp.accumulate(ia, g.cwiseProduct(sig));
  });
}

// Clamp with zero gradient outside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  const std::size_t ia = a.index();
  Tensor out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape().record(std::move(out), {ia}, [ia, lo, hi](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor d = ((x.array() >= lo) && (x.array() <= hi)).select(g, 0.0);
    tp.accumulate(ia, d);
  });
}

inline Var sum(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, Tensor::Constant(r, c, g(0, 0)));
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

// (m x n) -> (m x 1)
inline Var row_sum(const Var& a) {
  const std::size_t ia = a.index();
  Tensor out = a.value().rowwise().sum();
  const Eigen::Index c = a.cols();
  return a.tape().record(std::move(out), {ia}, [ia, c](Tape& tp, const Tensor& g) {
    Tensor d = g.col(0).replicate(1, c);
    tp.accumulate(ia, d);
  });
}

inline Var row_mean(const Var& a) { return scale(row_sum(a), 1.0 / static_cast<double>(a.cols())); }

// Each row repeated `times` consecutively: row r lands at r*times .. r*times+times-1.
inline Var repeat_rows(const Var& a, Eigen::Index times) {
  const std::size_t ia = a.index();
  const Eigen::Index m = a.rows(), n = a.cols();
  Tensor out(m * times, n);
  for (Eigen::Index r = 0; r < m; ++r) out.middleRows(r * times, times) = a.value().row(r).replicate(times, 1);
  return a.tape().record(std::move(out), {ia}, [ia, m, n, times](Tape& tp, const Tensor& g) {
    Tensor d(m, n);
    for (Eigen::Index r = 0; r < m; ++r) d.row(r) = g.middleRows(r * times, times).colwise().sum();
    tp.accumulate(ia, d);
  });
}

// Whole matrix stacked `times` over itself.
inline Var tile_rows(const Var& a, Eigen::Index times) {
  const std::size_t ia = a.index();
  const Eigen::Index m = a.rows(), n = a.cols();
  Tensor out = a.value().replicate(times, 1);
  return a.tape().record(std::move(out), {ia}, [ia, m, n, times](Tape& tp, const Tensor& g) {
    Tensor d = Tensor::Zero(m, n);
    for (Eigen::Index k = 0; k < times; ++k) d += g.middleRows(k * m, m);
    tp.accumulate(ia, d);
  });
}

// out(b, n) = sum_j g(b, j) h(n, j) w(j) + bias: a linear readout of the
// row-wise products of every g row with every h row, without forming them.
// g (B x d), h (N x d), w (d x 1), bias (1 x 1) -> B x N.
inline Var mix_readout(const Var& g, const Var& h, const Var& w, const Var& bias) {
  const Eigen::Index d = g.cols();
  if (h.cols() != d || w.rows() != d || w.cols() != 1 || bias.rows() != 1 || bias.cols() != 1) {
    throw DimensionError("mix_readout: shapes " + shape_string(g.value()) + ", " + shape_string(h.value()) + ", " +
                         shape_string(w.value()) + ", " + shape_string(bias.value()));
  }
  const std::size_t ig = g.index(), ih = h.index(), iw = w.index(), ib = bias.index();
  Tensor gw = g.value().array().rowwise() * w.value().col(0).transpose().array();
  Tensor out = gw * h.value().transpose();
  out.array() += bias.value()(0, 0);
  return g.tape().record(std::move(out), {ig, ih, iw, ib}, [ig, ih, iw, ib](Tape& tp, const Tensor& up) {
    const Tensor& gv = tp.value(ig);
    const Tensor& hv = tp.value(ih);
    const auto wrow = tp.value(iw).col(0).transpose().array();
    const Tensor up_h = up * hv;  // B x d
    if (tp.requires_grad(ig)) tp.accumulate(ig, Tensor((up_h.array().rowwise() * wrow).matrix()));
    if (tp.requires_grad(ih)) {
      Tensor gh = up.transpose() * gv;
      tp.accumulate(ih, Tensor((gh.array().rowwise() * wrow).matrix()));
    }
    if (tp.requires_grad(iw)) tp.accumulate(iw, Tensor((gv.array() * up_h.array()).colwise().sum().transpose()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, Tensor::Constant(1, 1, up.sum()));
  });
}

// Row-major reinterpretation; element count must match.
inline Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw DimensionError("reshape: element count mismatch");
  const std::size_t ia = a.index();
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  Tensor out = Eigen::Map<const Tensor>(a.value().data(), rows, cols);
  return a.tape().record(std::move(out), {ia}, [ia, r0, c0](Tape& tp, const Tensor& g) {
    Tensor d = Eigen::Map<const Tensor>(g.data(), r0, c0);
    tp.accumulate(ia, d);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Eigen::Index m = parts.front().rows();
  Eigen::Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    total += p.cols();
    ids.push_back(p.index());
    widths.push_back(p.cols());
  }
  Tensor out(m, total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().tape().record(std::move(out), ids, [ids, widths](Tape& tp, const Tensor& g) {
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) tp.accumulate(ids[k], g.middleCols(o, widths[k]));
      o += widths[k];
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Eigen::Index n = parts.front().cols();
  Eigen::Index total = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column count mismatch");
    total += p.rows();
    ids.push_back(p.index());
    heights.push_back(p.rows());
  }
  Tensor out(total, n);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return parts.front().tape().record(std::move(out), ids, [ids, heights](Tape& tp, const Tensor& g) {
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) tp.accumulate(ids[k], g.middleRows(o, heights[k]));
      o += heights[k];
    }
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  const std::size_t ia = a.index();
  const Eigen::Index m = a.rows(), n = a.cols();
  Tensor out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), {ia}, [ia, m, n, start, count](Tape& tp, const Tensor& g) {
    Tensor d = Tensor::Zero(m, n);
    d.middleCols(start, count) = g;
    tp.accumulate(ia, d);
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw DimensionError("slice_rows: out of range");
  const std::size_t ia = a.index();
  const Eigen::Index m = a.rows(), n = a.cols();
  Tensor out = a.value().middleRows(start, count);
  return a.tape().record(std::move(out), {ia}, [ia, m, n, start, count](Tape& tp, const Tensor& g) {
    Tensor d = Tensor::Zero(m, n);
    d.middleRows(start, count) = g;
    tp.accumulate(ia, d);
  });
}

}  // namespace tracer::nn
