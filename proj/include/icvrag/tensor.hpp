#pragma once

// Dense row-major tensors with reverse-mode gradients recorded on a tape.
//
// Every value is a 2-D Eigen matrix; vectors are 1 x d rows. Ops are free
// functions over Var<Scalar> handles and record a backward closure on the
// owning Tape. Parameters live outside the tape and receive gradients by
// accumulation, so one Parameter can be used by many tapes in sequence.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace icvrag {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(Index r, Index c) {
  return "[" + std::to_string(r) + ", " + std::to_string(c) + "]";
}

/// A trainable weight: value plus an accumulated gradient of the same shape.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Matrix<Scalar>& value() const;
  const Matrix<Scalar>& grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  /// Scalar value of a 1x1 node.
  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar " + shape_str(rows(), cols()));
    return value()(0, 0);
  }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* t, std::size_t id) : tape_(t), id_(id) {}

  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(const Mat& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// With gradients disabled, parameters enter as constants and no closures are kept.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }

  Var<Scalar> parameter(Parameter<Scalar>& p) {
    if (!grad_enabled_) return constant(p.value);
    Parameter<Scalar>* target = &p;
    return leaf(p.value, [target](const Mat& g) { target->grad += g; });
  }

  /// A grad-requiring node with no tape inputs; fn routes its gradient elsewhere.
  Var<Scalar> leaf(Mat value, BackwardFn fn) {
    if (!grad_enabled_) return constant(std::move(value));
    return push(std::move(value), true, std::move(fn));
  }

  /// Records an op output. The closure runs only if some input requires grad.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape() != this) throw std::logic_error("op mixes vars from different tapes");
      needs = needs || in.requires_grad();
    }
    if (!value.allFinite()) throw NumericError("non-finite value produced on tape");
    return push(std::move(value), needs && grad_enabled_, needs && grad_enabled_ ? std::move(fn) : nullptr);
  }

  /// Adds g into the gradient of v (no-op for constants).
  void accumulate(const Var<Scalar>& v, const Mat& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Reverse pass from a scalar loss. Parameter grads are accumulated, not overwritten.
  void backward(const Var<Scalar>& loss) {
    if (loss.tape() != this) throw std::logic_error("backward on a var from another tape");
    if (loss.rows() != 1 || loss.cols() != 1)
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.rows(), loss.cols()));
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(n.grad);
    }
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<Scalar> push(Mat value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(fn)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // deque keeps references from value() stable while the tape grows
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
  return tape_->value(id_);
}
template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::grad() const {
  return tape_->grad(id_);
}
template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  loss.tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementary ops

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.rows(), a.cols()) + " x " +
                     shape_str(b.rows(), b.cols()));
  auto* t = a.tape();
  return t->record(a.value() * b.value(), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) t->accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t->accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  auto* t = a.tape();
  Matrix<Scalar> v = a.value().transpose();
  return t->record(std::move(v), {a}, [t, a](const Matrix<Scalar>& g) { t->accumulate(a, g.transpose()); });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add shape mismatch: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  auto* t = a.tape();
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub shape mismatch: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  auto* t = a.tape();
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

/// Adds a 1 x d row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeError("add_row expects [1, " + std::to_string(a.cols()) + "], got " + shape_str(row.rows(), row.cols()));
  auto* t = a.tape();
  Matrix<Scalar> v = a.value().rowwise() + row.value().row(0);
  return t->record(std::move(v), {a, row}, [t, a, row](const Matrix<Scalar>& g) {
    t->accumulate(a, g);
    if (row.requires_grad()) t->accumulate(row, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  auto* t = a.tape();
  return t->record(a.value() * c, {a}, [t, a, c](const Matrix<Scalar>& g) { t->accumulate(a, g * c); });
}

/// Multiplies a by a 1x1 node.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& a, const Var<Scalar>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scale_by expects a 1x1 factor");
  auto* t = a.tape();
  return t->record(a.value() * s.value()(0, 0), {a, s}, [t, a, s](const Matrix<Scalar>& g) {
    if (a.requires_grad()) t->accumulate(a, g * s.value()(0, 0));
    if (s.requires_grad()) {
      Matrix<Scalar> gs(1, 1);
      gs(0, 0) = g.cwiseProduct(a.value()).sum();
      t->accumulate(s, gs);
    }
  });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("hadamard shape mismatch");
  auto* t = a.tape();
  return t->record(a.value().cwiseProduct(b.value()), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) t->accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  auto* t = a.tape();
  Matrix<Scalar> v = a.value().cwiseMax(Scalar(0));
  return t->record(std::move(v), {a}, [t, a](const Matrix<Scalar>& g) {
    Matrix<Scalar> mask = (a.value().array() > Scalar(0)).template cast<Scalar>();
    t->accumulate(a, g.cwiseProduct(mask));
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto* t = a.tape();
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return t->record(std::move(v), {a}, [t, a, r, c](const Matrix<Scalar>& g) {
    t->accumulate(a, Matrix<Scalar>::Constant(r, c, g(0, 0)));
  });
}

/// Stops gradient flow: a constant copy of a's value on the same tape.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return a.tape()->constant(a.value());
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  auto* t = parts[0].tape();
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix<Scalar> v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var<Scalar>> keep(parts.begin(), parts.end());
  return t->record(std::move(v), parts, [t, keep](const Matrix<Scalar>& g) {
    Index off = 0;
    for (const auto& p : keep) {
      if (p.requires_grad()) t->accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::initializer_list<Var<Scalar>> parts) {
  return concat_rows(std::span<const Var<Scalar>>(parts.begin(), parts.size()));
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  auto* t = parts[0].tape();
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix<Scalar> v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var<Scalar>> keep(parts.begin(), parts.end());
  return t->record(std::move(v), parts, [t, keep](const Matrix<Scalar>& g) {
    Index off = 0;
    for (const auto& p : keep) {
      if (p.requires_grad()) t->accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols out of range");
  auto* t = a.tape();
  Matrix<Scalar> v = a.value().middleCols(start, count);
  const Index r = a.rows(), c = a.cols();
  return t->record(std::move(v), {a}, [t, a, r, c, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(r, c);
    full.middleCols(start, count) = g;
    t->accumulate(a, full);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows out of range");
  auto* t = a.tape();
  Matrix<Scalar> v = a.value().middleRows(start, count);
  const Index r = a.rows(), c = a.cols();
  return t->record(std::move(v), {a}, [t, a, r, c, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(r, c);
    full.middleRows(start, count) = g;
    t->accumulate(a, full);
  });
}

/// Embedding lookup: rows of a parameter table selected by id.
template <typename Scalar>
Var<Scalar> gather_rows(Tape<Scalar>& tape, Parameter<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> v(static_cast<Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.value.rows())
      throw std::out_of_range("row id " + std::to_string(ids[i]) + " outside table " + table.name);
    v.row(static_cast<Index>(i)) = table.value.row(ids[i]);
  }
  Parameter<Scalar>* target = &table;
  std::vector<int> keep(ids.begin(), ids.end());
  return tape.leaf(std::move(v), [target, keep](const Matrix<Scalar>& g) {
    for (std::size_t i = 0; i < keep.size(); ++i) target->grad.row(keep[i]) += g.row(static_cast<Index>(i));
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

/// Row-wise softmax with max subtraction. With causal set, entry (i, j) is
/// masked to zero whenever j > i + causal_offset.
template <typename Scalar>
Matrix<Scalar> softmax_rows_value(const Matrix<Scalar>& x, bool causal = false, Index causal_offset = 0) {
  if (x.cols() == 0) throw ShapeError("softmax over an empty axis");
  Matrix<Scalar> p = Matrix<Scalar>::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index limit = causal ? std::min<Index>(x.cols(), i + causal_offset + 1) : x.cols();
    if (limit <= 0) throw ShapeError("causal mask hides every position of row " + std::to_string(i));
    const Scalar m = x.row(i).head(limit).maxCoeff();
    Scalar z = 0;
    for (Index j = 0; j < limit; ++j) {
      p(i, j) = std::exp(x(i, j) - m);
      z += p(i, j);
    }
    p.row(i).head(limit) /= z;
  }
  return p;
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a, bool causal = false, Index causal_offset = 0) {
  auto* t = a.tape();
  Matrix<Scalar> p = softmax_rows_value(a.value(), causal, causal_offset);
  return t->record(p, {a}, [t, a, p](const Matrix<Scalar>& g) {
    // dx = p * (g - sum(g * p))
    Matrix<Scalar> dot = g.cwiseProduct(p).rowwise().sum();
    Matrix<Scalar> dx = p.cwiseProduct(g - dot.replicate(1, g.cols()));
    t->accumulate(a, dx);
  });
}

/// Softmax along axis 0 (columns) or 1 (rows).
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& a, int axis) {
  if (axis == 1) return softmax_rows(a);
  if (axis == 0) return transpose(softmax_rows(transpose(a)));
  throw ShapeError("softmax axis must be 0 or 1");
}

/// Mean-cross-entropy of row-wise softmax(logits) against target ids.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  if (targets.empty()) throw ShapeError("cross_entropy over zero steps");
  auto* t = logits.tape();
  Matrix<Scalar> p = softmax_rows_value(logits.value());
  const Scalar n = static_cast<Scalar>(targets.size());
  Scalar loss = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw std::out_of_range("target id outside vocabulary");
    const auto row = logits.value().row(i);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(y);
  }
  Matrix<Scalar> v(1, 1);
  v(0, 0) = loss / n;
  std::vector<int> ys(targets.begin(), targets.end());
  return t->record(std::move(v), {logits}, [t, logits, p, ys, n](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = p;
    for (std::size_t i = 0; i < ys.size(); ++i) d(static_cast<Index>(i), ys[i]) -= Scalar(1);
    t->accumulate(logits, d * (g(0, 0) / n));
  });
}

/// Column-wise mean of the rows: [T, d] -> [1, d].
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
  if (a.rows() == 0) throw ShapeError("mean over zero rows");
  auto* t = a.tape();
  const Index r = a.rows();
  Matrix<Scalar> v = a.value().colwise().sum() / static_cast<Scalar>(r);
  return t->record(std::move(v), {a}, [t, a, r](const Matrix<Scalar>& g) {
    t->accumulate(a, g.replicate(r, 1) / static_cast<Scalar>(r));
  });
}

/// Column-wise max of the rows; ties route gradient to the first maximal row.
template <typename Scalar>
Var<Scalar> max_rows(const Var<Scalar>& a) {
  if (a.rows() == 0) throw ShapeError("max over zero rows");
  auto* t = a.tape();
  const Index r = a.rows(), c = a.cols();
  Matrix<Scalar> v(1, c);
  std::vector<Index> arg(static_cast<std::size_t>(c));
  for (Index j = 0; j < c; ++j) {
    Index best = 0;
    for (Index i = 1; i < r; ++i)
      if (a.value()(i, j) > a.value()(best, j)) best = i;
    arg[static_cast<std::size_t>(j)] = best;
    v(0, j) = a.value()(best, j);
  }
  return t->record(std::move(v), {a}, [t, a, r, c, arg](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(r, c);
    for (Index j = 0; j < c; ++j) d(arg[static_cast<std::size_t>(j)], j) = g(0, j);
    t->accumulate(a, d);
  });
}

template <typename Scalar>
Var<Scalar> mean_pool(const Var<Scalar>& h) {
  return mean_rows(h);
}

/// Per-row standardization without learned gain or bias.
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& a, Scalar eps = Scalar(1e-5)) {
  auto* t = a.tape();
  const Index d = a.cols();
  Matrix<Scalar> xhat(a.rows(), d);
  Matrix<Scalar> inv_std(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    const Scalar mu = a.value().row(i).mean();
    const Scalar var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i, 0) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = (a.value().row(i).array() - mu) * inv_std(i, 0);
  }
  return t->record(xhat, {a}, [t, a, xhat, inv_std, d](const Matrix<Scalar>& g) {
    Matrix<Scalar> dx(g.rows(), d);
    for (Index i = 0; i < g.rows(); ++i) {
      const Scalar gm = g.row(i).mean();
      const Scalar gx = g.row(i).cwiseProduct(xhat.row(i)).mean();
      dx.row(i) = inv_std(i, 0) * (g.row(i).array() - gm - xhat.row(i).array() * gx);
    }
    t->accumulate(a, dx);
  });
}

/// Cosine similarity of two 1 x d rows as a 1x1 node. Zero-norm inputs are errors.
template <typename Scalar>
Var<Scalar> cosine(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != 1 || b.rows() != 1 || a.cols() != b.cols()) throw ShapeError("cosine expects two equal-length rows");
  const Scalar na = a.value().norm();
  const Scalar nb = b.value().norm();
  if (na == Scalar(0) || nb == Scalar(0)) throw std::domain_error("cosine of a zero-norm vector");
  auto* t = a.tape();
  const Scalar c = a.value().row(0).dot(b.value().row(0)) / (na * nb);
  Matrix<Scalar> v(1, 1);
  v(0, 0) = c;
  return t->record(std::move(v), {a, b}, [t, a, b, na, nb, c](const Matrix<Scalar>& g) {
    const Scalar s = g(0, 0);
    if (a.requires_grad()) t->accumulate(a, s * (b.value() / (na * nb) - c * a.value() / (na * na)));
    if (b.requires_grad()) t->accumulate(b, s * (a.value() / (na * nb) - c * b.value() / (nb * nb)));
  });
}

// ---------------------------------------------------------------------------
// Attention

/// softmax(Q K^T / sqrt(d_k)) V. Q: [t_q, d_k], K: [t_k, d_k], V: [t_k, d_v].
template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, bool causal = false) {
  if (q.cols() != k.cols())
    throw ShapeError("attention key width " + std::to_string(k.cols()) + " != query width " + std::to_string(q.cols()));
  if (k.rows() != v.rows()) throw ShapeError("attention needs one value row per key row");
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(k.cols()));
  Var<Scalar> scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  // causal: query i sees keys up to i, aligned so the last query sees every key
  Var<Scalar> weights = softmax_rows(scores, causal, k.rows() - q.rows());
  return matmul(weights, v);
}

/// Attention weights only, same conventions as scaled_dot_attention.
template <typename Scalar>
Var<Scalar> attention_weights(const Var<Scalar>& q, const Var<Scalar>& k) {
  if (q.cols() != k.cols()) throw ShapeError("attention key width differs from query width");
  const Scalar inv_sqrt_dk = Scalar(1) / std::sqrt(static_cast<Scalar>(k.cols()));
  return softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
}

/// Multi-head variant: columns split evenly into `heads` groups.
template <typename Scalar>
Var<Scalar> multi_head_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, int heads,
                                 bool causal = false) {
  if (heads <= 1) return scaled_dot_attention(q, k, v, causal);
  if (q.cols() % heads != 0 || v.cols() % heads != 0) throw ShapeError("model width not divisible by head count");
  const Index dk = q.cols() / heads, dv = v.cols() / heads;
  std::vector<Var<Scalar>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h)
    outs.push_back(scaled_dot_attention(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk), slice_cols(v, h * dv, dv),
                                        causal));
  return concat_cols(std::span<const Var<Scalar>>(outs));
}

}  // namespace icvrag
