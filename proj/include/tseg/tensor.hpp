#pragma once

// Dense tensor algebra with reverse-mode automatic differentiation.
// Templated on the scalar type: tests instantiate double, the training
// pipeline may instantiate float.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <vector>

#include "tseg/common.hpp"

namespace tseg {

template <class Real>
struct TensorNode {
  std::vector<long> shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until the node participates in a backward pass
  bool requires_grad = false;
  std::function<void()> backprop;  // set only while a tape is recording

  long numel() const {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<Real>> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<long> shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }
  static Tensor filled(std::vector<long> shape, Real v, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(n->numel()), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from(std::vector<long> shape, std::vector<Real> data, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    long expect = n->numel();
    if (static_cast<long>(data.size()) != expect)
      contract_fail("tensor: data size " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(n->shape));
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(Real v) { return from({1}, {v}); }
  static Tensor row_matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    std::vector<Real> data;
    long r = 0, c = -1;
    for (auto& row : rows) {
      if (c < 0) c = static_cast<long>(row.size());
      if (static_cast<long>(row.size()) != c) contract_fail("tensor: ragged initializer");
      data.insert(data.end(), row.begin(), row.end());
      ++r;
    }
    return from({r, c}, std::move(data));
  }
  static Tensor identity(long n) {
    Tensor t = zeros({n, n});
    for (long i = 0; i < n; ++i) t.data()[i * n + i] = Real(1);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<long>& shape() const { return node_->shape; }
  long numel() const { return node_->numel(); }
  long rows() const { return node_->shape.at(0); }
  long cols() const { return node_->shape.at(1); }
  long dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  Real* data() { return node_->value.data(); }
  const Real* data() const { return node_->value.data(); }
  const std::vector<Real>& values() const { return node_->value; }
  Real item() const {
    if (numel() != 1) contract_fail("item(): tensor is not scalar, shape " + shape_str(shape()));
    return node_->value[0];
  }
  Real at(long i) const { return node_->value[static_cast<size_t>(i)]; }
  Real at(long r, long c) const { return node_->value[static_cast<size_t>(r * cols() + c)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<Real>& grad() const { return node_->grad; }
  std::vector<Real>& grad_mutable() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  std::shared_ptr<TensorNode<Real>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<Real>> node_;
};

// Ordered record of primitive operations. Creation order is a topological
// order of the graph, so the backward traversal just walks it in reverse.
// One tape per training step; destroy or clear() between steps. Concurrent
// backward on one tape is not supported.
template <class Real>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<TensorNode<Real>> n) { nodes_.push_back(std::move(n)); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(const Tensor<Real>& loss) {
    if (loss.numel() != 1)
      contract_fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    auto ln = loss.node();
    ln->ensure_grad();
    ln->grad[0] += Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode<Real>* n = it->get();
      if (!n->grad.empty() && n->backprop) n->backprop();
    }
  }

 private:
  std::vector<std::shared_ptr<TensorNode<Real>>> nodes_;
  Tape* prev_ = nullptr;
  inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

template <class Real>
inline std::shared_ptr<TensorNode<Real>> new_node(std::vector<long> shape) {
  auto n = std::make_shared<TensorNode<Real>>();
  n->shape = std::move(shape);
  n->value.resize(static_cast<size_t>(n->numel()));
  return n;
}

// Finalizes an op node: propagates requires_grad and records the backprop
// closure when a tape is active.
template <class Real, class MakeBackprop>
inline Tensor<Real> attach(std::shared_ptr<TensorNode<Real>> out,
                           std::initializer_list<std::shared_ptr<TensorNode<Real>>> parents,
                           MakeBackprop&& make) {
  bool rg = false;
  for (auto& p : parents) rg = rg || p->requires_grad;
  out->requires_grad = rg;
  if (rg && Tape<Real>::active()) {
    out->backprop = make();
    Tape<Real>::active()->record(out);
  }
  return Tensor<Real>(out);
}

template <class Real>
inline void check_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    contract_fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape("add", a, b);
  auto out = detail::new_node<Real>(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out->value.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto an = a.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an, bn}, [an, bn, o, n] {
    return [an, bn, o, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long i = 0; i < n; ++i) bn->grad[i] += o->grad[i];
      }
    };
  });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape("sub", a, b);
  auto out = detail::new_node<Real>(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out->value.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  auto an = a.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an, bn}, [an, bn, o, n] {
    return [an, bn, o, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long i = 0; i < n; ++i) bn->grad[i] -= o->grad[i];
      }
    };
  });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape("mul", a, b);
  auto out = detail::new_node<Real>(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out->value.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  auto an = a.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an, bn}, [an, bn, o, n] {
    return [an, bn, o, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long i = 0; i < n; ++i) bn->grad[i] += o->grad[i] * an->value[i];
      }
    };
  });
}

template <class Real>
Tensor<Real> divide(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape("divide", a, b);
  auto out = detail::new_node<Real>(a.shape());
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out->value.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  auto an = a.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an, bn}, [an, bn, o, n] {
    return [an, bn, o, n] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i] / bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long i = 0; i < n; ++i)
          bn->grad[i] -= o->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
      }
    };
  });
}

namespace detail {

// Shared scaffolding for unary elementwise ops: fwd(x) and dfdx(x, y).
template <class Real, class Fwd, class Dfdx>
Tensor<Real> unary(const Tensor<Real>& a, Fwd fwd, Dfdx dfdx) {
  auto out = new_node<Real>(a.shape());
  const Real* pa = a.data();
  Real* po = out->value.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return attach<Real>(out, {an}, [an, o, n, dfdx] {
    return [an, o, n, dfdx] {
      an->ensure_grad();
      for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i] * dfdx(an->value[i], o->value[i]);
    };
  });
}

}  // namespace detail

template <class Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return -x; }, [](Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> exp_op(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <class Real>
Tensor<Real> log_op(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <class Real>
Tensor<Real> sqrt_op(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return Real(0.5) / y; });
}

template <class Real>
Tensor<Real> reciprocal(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return Real(1) / x; }, [](Real, Real y) { return -y * y; });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return detail::unary(
      a,
      [](Real x) {
        // Branch avoids overflow of exp for large |x|.
        return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                            : std::exp(x) / (Real(1) + std::exp(x));
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Tensor<Real> abs_op(const Tensor<Real>& a) {
  return detail::unary(
      a, [](Real x) { return std::abs(x); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : (x < Real(0) ? Real(-1) : Real(0)); });
}

template <class Real>
Tensor<Real> clamp(const Tensor<Real>& a, Real lo, Real hi) {
  return detail::unary(
      a, [lo, hi](Real x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](Real x, Real) { return (x > lo && x < hi) ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> clamp_max(const Tensor<Real>& a, Real hi) {
  return detail::unary(
      a, [hi](Real x) { return std::min(hi, x); },
      [hi](Real x, Real) { return x < hi ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
  return detail::unary(
      a, [c](Real x) { return x + c; }, [](Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> mul_scalar(const Tensor<Real>& a, Real c) {
  return detail::unary(
      a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
}

// c - x
template <class Real>
Tensor<Real> sub_from_scalar(Real c, const Tensor<Real>& a) {
  return detail::unary(
      a, [c](Real x) { return c - x; }, [](Real, Real) { return Real(-1); });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    contract_fail("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
  const long M = a.rows(), K = a.cols(), N = b.cols();
  auto out = detail::new_node<Real>({M, N});
  const Real* pa = a.data();
  const Real* pb = b.data();
  Real* po = out->value.data();
  std::fill(po, po + M * N, Real(0));
  for (long i = 0; i < M; ++i) {
    const Real* arow = pa + i * K;
    Real* orow = po + i * N;
    for (long k = 0; k < K; ++k) {
      const Real av = arow[k];
      const Real* brow = pb + k * N;
      for (long j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an, bn}, [an, bn, o, M, K, N] {
    return [an, bn, o, M, K, N] {
      const Real* g = o->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA = dY * B^T
        for (long i = 0; i < M; ++i) {
          const Real* grow = g + i * N;
          Real* da = an->grad.data() + i * K;
          for (long k = 0; k < K; ++k) {
            const Real* brow = bn->value.data() + k * N;
            Real acc = 0;
            for (long j = 0; j < N; ++j) acc += grow[j] * brow[j];
            da[k] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = A^T * dY
        for (long k = 0; k < K; ++k) {
          Real* db = bn->grad.data() + k * N;
          for (long i = 0; i < M; ++i) {
            const Real av = an->value[i * K + k];
            const Real* grow = g + i * N;
            for (long j = 0; j < N; ++j) db[j] += av * grow[j];
          }
        }
      }
    };
  });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.rank() != 2) contract_fail("transpose: expected rank-2, got " + shape_str(a.shape()));
  const long R = a.rows(), C = a.cols();
  auto out = detail::new_node<Real>({C, R});
  for (long i = 0; i < R; ++i)
    for (long j = 0; j < C; ++j) out->value[j * R + i] = a.data()[i * C + j];
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an}, [an, o, R, C] {
    return [an, o, R, C] {
      an->ensure_grad();
      for (long i = 0; i < R; ++i)
        for (long j = 0; j < C; ++j) an->grad[i * C + j] += o->grad[j * R + i];
    };
  });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts. Reduction accumulators are 64-bit regardless of
// the instantiated scalar type.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
  double acc = 0;
  const long n = a.numel();
  for (long i = 0; i < n; ++i) acc += static_cast<double>(a.data()[i]);
  auto out = detail::new_node<Real>({1});
  out->value[0] = static_cast<Real>(acc);
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an}, [an, o, n] {
    return [an, o, n] {
      an->ensure_grad();
      const Real g = o->grad[0];
      for (long i = 0; i < n; ++i) an->grad[i] += g;
    };
  });
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
  return mul_scalar(sum_all(a), Real(1) / static_cast<Real>(a.numel()));
}

template <class Real>
Tensor<Real> sum_axis0(const Tensor<Real>& a) {
  if (a.rank() != 2) contract_fail("sum_axis0: expected rank-2, got " + shape_str(a.shape()));
  const long R = a.rows(), C = a.cols();
  auto out = detail::new_node<Real>({C});
  for (long j = 0; j < C; ++j) {
    double acc = 0;
    for (long i = 0; i < R; ++i) acc += static_cast<double>(a.data()[i * C + j]);
    out->value[j] = static_cast<Real>(acc);
  }
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an}, [an, o, R, C] {
    return [an, o, R, C] {
      an->ensure_grad();
      for (long i = 0; i < R; ++i)
        for (long j = 0; j < C; ++j) an->grad[i * C + j] += o->grad[j];
    };
  });
}

template <class Real>
Tensor<Real> sum_axis1(const Tensor<Real>& a) {
  if (a.rank() != 2) contract_fail("sum_axis1: expected rank-2, got " + shape_str(a.shape()));
  const long R = a.rows(), C = a.cols();
  auto out = detail::new_node<Real>({R});
  for (long i = 0; i < R; ++i) {
    double acc = 0;
    for (long j = 0; j < C; ++j) acc += static_cast<double>(a.data()[i * C + j]);
    out->value[i] = static_cast<Real>(acc);
  }
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an}, [an, o, R, C] {
    return [an, o, R, C] {
      an->ensure_grad();
      for (long i = 0; i < R; ++i)
        for (long j = 0; j < C; ++j) an->grad[i * C + j] += o->grad[i];
    };
  });
}

template <class Real>
Tensor<Real> mean_axis0(const Tensor<Real>& a) {
  return mul_scalar(sum_axis0(a), Real(1) / static_cast<Real>(a.rows()));
}

// x[R,C] + v[C] broadcast over rows (bias add).
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& v) {
  if (x.rank() != 2 || v.numel() != x.cols())
    contract_fail("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                  shape_str(v.shape()));
  const long R = x.rows(), C = x.cols();
  auto out = detail::new_node<Real>(x.shape());
  for (long i = 0; i < R; ++i)
    for (long j = 0; j < C; ++j) out->value[i * C + j] = x.data()[i * C + j] + v.data()[j];
  auto xn = x.node(), vn = v.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {xn, vn}, [xn, vn, o, R, C] {
    return [xn, vn, o, R, C] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (long i = 0; i < R * C; ++i) xn->grad[i] += o->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (long i = 0; i < R; ++i)
          for (long j = 0; j < C; ++j) vn->grad[j] += o->grad[i * C + j];
      }
    };
  });
}

// x[R,C] scaled per row by v[R].
template <class Real>
Tensor<Real> mul_colvec(const Tensor<Real>& x, const Tensor<Real>& v) {
  if (x.rank() != 2 || v.numel() != x.rows())
    contract_fail("mul_colvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                  shape_str(v.shape()));
  const long R = x.rows(), C = x.cols();
  auto out = detail::new_node<Real>(x.shape());
  for (long i = 0; i < R; ++i)
    for (long j = 0; j < C; ++j) out->value[i * C + j] = x.data()[i * C + j] * v.data()[i];
  auto xn = x.node(), vn = v.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {xn, vn}, [xn, vn, o, R, C] {
    return [xn, vn, o, R, C] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (long i = 0; i < R; ++i)
          for (long j = 0; j < C; ++j) xn->grad[i * C + j] += o->grad[i * C + j] * vn->value[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (long i = 0; i < R; ++i) {
          double acc = 0;
          for (long j = 0; j < C; ++j)
            acc += static_cast<double>(o->grad[i * C + j]) * xn->value[i * C + j];
          vn->grad[i] += static_cast<Real>(acc);
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, std::vector<long> shape) {
  auto out = detail::new_node<Real>(std::move(shape));
  if (out->numel() != a.numel())
    contract_fail("reshape: element count mismatch " + shape_str(a.shape()) + " vs " +
                  shape_str(out->shape));
  out->value = a.node()->value;
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  const long n = a.numel();
  return detail::attach<Real>(out, {an}, [an, o, n] {
    return [an, o, n] {
      an->ensure_grad();
      for (long i = 0; i < n; ++i) an->grad[i] += o->grad[i];
    };
  });
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, long r0, long r1) {
  if (a.rank() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1)
    contract_fail("slice_rows: invalid range [" + std::to_string(r0) + "," + std::to_string(r1) +
                  ") for " + shape_str(a.shape()));
  const long C = a.cols();
  auto out = detail::new_node<Real>({r1 - r0, C});
  std::copy(a.data() + r0 * C, a.data() + r1 * C, out->value.begin());
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {an}, [an, o, r0, r1, C] {
    return [an, o, r0, r1, C] {
      an->ensure_grad();
      const long n = (r1 - r0) * C;
      for (long i = 0; i < n; ++i) an->grad[r0 * C + i] += o->grad[i];
    };
  });
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) contract_fail("concat_rows: empty input");
  const long C = parts[0].cols();
  long R = 0;
  for (auto& p : parts) {
    if (p.rank() != 2 || p.cols() != C)
      contract_fail("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                    shape_str(p.shape()));
    R += p.rows();
  }
  auto out = detail::new_node<Real>({R, C});
  long off = 0;
  for (auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out->value.begin() + off);
    off += p.numel();
  }
  std::vector<std::shared_ptr<TensorNode<Real>>> pn;
  bool rg = false;
  for (auto& p : parts) {
    pn.push_back(p.node());
    rg = rg || p.requires_grad();
  }
  out->requires_grad = rg;
  TensorNode<Real>* o = out.get();
  if (rg && Tape<Real>::active()) {
    out->backprop = [pn, o] {
      long off2 = 0;
      for (auto& p : pn) {
        const long n = p->numel();
        if (p->requires_grad) {
          p->ensure_grad();
          for (long i = 0; i < n; ++i) p->grad[i] += o->grad[off2 + i];
        }
        off2 += n;
      }
    };
    Tape<Real>::active()->record(out);
  }
  return Tensor<Real>(out);
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) contract_fail("concat_cols: empty input");
  const long R = parts[0].rows();
  long C = 0;
  for (auto& p : parts) {
    if (p.rank() != 2 || p.rows() != R)
      contract_fail("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                    shape_str(p.shape()));
    C += p.cols();
  }
  auto out = detail::new_node<Real>({R, C});
  long off = 0;
  for (auto& p : parts) {
    const long pc = p.cols();
    for (long i = 0; i < R; ++i)
      std::copy(p.data() + i * pc, p.data() + (i + 1) * pc, out->value.begin() + i * C + off);
    off += pc;
  }
  std::vector<std::shared_ptr<TensorNode<Real>>> pn;
  bool rg = false;
  for (auto& p : parts) {
    pn.push_back(p.node());
    rg = rg || p.requires_grad();
  }
  out->requires_grad = rg;
  TensorNode<Real>* o = out.get();
  if (rg && Tape<Real>::active()) {
    out->backprop = [pn, o, R, C] {
      long off2 = 0;
      for (auto& p : pn) {
        const long pc = p->shape[1];
        if (p->requires_grad) {
          p->ensure_grad();
          for (long i = 0; i < R; ++i)
            for (long j = 0; j < pc; ++j) p->grad[i * pc + j] += o->grad[i * C + off2 + j];
        }
        off2 += pc;
      }
    };
    Tape<Real>::active()->record(out);
  }
  return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// Softmax family. A rank-1 tensor is treated as a single row.
// ---------------------------------------------------------------------------

namespace detail {
template <class Real>
inline std::pair<long, long> rowview(const Tensor<Real>& a) {
  if (a.rank() == 1) return {1, a.numel()};
  if (a.rank() == 2) return {a.rows(), a.cols()};
  contract_fail("softmax: expected rank-1 or rank-2, got " + shape_str(a.shape()));
}
}  // namespace detail

template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  auto [R, C] = detail::rowview(a);
  auto out = detail::new_node<Real>(a.shape());
  for (long i = 0; i < R; ++i) {
    const Real* x = a.data() + i * C;
    Real* y = out->value.data() + i * C;
    Real m = x[0];
    for (long j = 1; j < C; ++j) m = std::max(m, x[j]);
    double z = 0;
    for (long j = 0; j < C; ++j) {
      y[j] = std::exp(x[j] - m);
      z += static_cast<double>(y[j]);
    }
    const Real inv = static_cast<Real>(1.0 / z);
    for (long j = 0; j < C; ++j) y[j] *= inv;
  }
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  const long Rc = R, Cc = C;
  return detail::attach<Real>(out, {an}, [an, o, Rc, Cc] {
    return [an, o, Rc, Cc] {
      an->ensure_grad();
      for (long i = 0; i < Rc; ++i) {
        const Real* y = o->value.data() + i * Cc;
        const Real* g = o->grad.data() + i * Cc;
        double dot = 0;
        for (long j = 0; j < Cc; ++j) dot += static_cast<double>(g[j]) * y[j];
        Real* da = an->grad.data() + i * Cc;
        for (long j = 0; j < Cc; ++j) da[j] += y[j] * (g[j] - static_cast<Real>(dot));
      }
    };
  });
}

template <class Real>
Tensor<Real> log_softmax_rows(const Tensor<Real>& a) {
  auto [R, C] = detail::rowview(a);
  auto out = detail::new_node<Real>(a.shape());
  for (long i = 0; i < R; ++i) {
    const Real* x = a.data() + i * C;
    Real* y = out->value.data() + i * C;
    Real m = x[0];
    for (long j = 1; j < C; ++j) m = std::max(m, x[j]);
    double z = 0;
    for (long j = 0; j < C; ++j) z += std::exp(static_cast<double>(x[j] - m));
    const Real lse = m + static_cast<Real>(std::log(z));
    for (long j = 0; j < C; ++j) y[j] = x[j] - lse;
  }
  auto an = a.node();
  TensorNode<Real>* o = out.get();
  const long Rc = R, Cc = C;
  return detail::attach<Real>(out, {an}, [an, o, Rc, Cc] {
    return [an, o, Rc, Cc] {
      an->ensure_grad();
      for (long i = 0; i < Rc; ++i) {
        const Real* y = o->value.data() + i * Cc;
        const Real* g = o->grad.data() + i * Cc;
        double gsum = 0;
        for (long j = 0; j < Cc; ++j) gsum += static_cast<double>(g[j]);
        Real* da = an->grad.data() + i * Cc;
        for (long j = 0; j < Cc; ++j)
          da[j] += g[j] - static_cast<Real>(std::exp(static_cast<double>(y[j])) * gsum);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Neural-net primitives
// ---------------------------------------------------------------------------

// Length-preserving 1-D convolution over time with symmetric zero padding.
// x: [T, Cin], w: [K, Cin, Cout] with odd K, b: [Cout].
template <class Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    long dilation) {
  if (x.rank() != 2 || w.rank() != 3)
    contract_fail("conv1d: expected x rank-2 and w rank-3, got " + shape_str(x.shape()) + " and " +
                  shape_str(w.shape()));
  const long T = x.rows(), Cin = x.cols();
  const long K = w.dim(0), Cout = w.dim(2);
  if (w.dim(1) != Cin)
    contract_fail("conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
                  shape_str(w.shape()));
  if (K % 2 == 0) contract_fail("conv1d: kernel size must be odd, got " + std::to_string(K));
  if (b.numel() != Cout)
    contract_fail("conv1d: bias shape " + shape_str(b.shape()) + " does not match Cout " +
                  std::to_string(Cout));
  if (dilation < 1) contract_fail("conv1d: dilation must be >= 1");
  const long ctr = K / 2;
  auto out = detail::new_node<Real>({T, Cout});
  for (long t = 0; t < T; ++t) {
    Real* orow = out->value.data() + t * Cout;
    for (long j = 0; j < Cout; ++j) orow[j] = b.data()[j];
    for (long k = 0; k < K; ++k) {
      const long src = t + (k - ctr) * dilation;
      if (src < 0 || src >= T) continue;
      const Real* xrow = x.data() + src * Cin;
      const Real* wk = w.data() + k * Cin * Cout;
      for (long c = 0; c < Cin; ++c) {
        const Real xv = xrow[c];
        const Real* wrow = wk + c * Cout;
        for (long j = 0; j < Cout; ++j) orow[j] += xv * wrow[j];
      }
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {xn, wn, bn}, [xn, wn, bn, o, T, Cin, K, Cout, ctr, dilation] {
    return [xn, wn, bn, o, T, Cin, K, Cout, ctr, dilation] {
      const Real* g = o->grad.data();
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long t = 0; t < T; ++t)
          for (long j = 0; j < Cout; ++j) bn->grad[j] += g[t * Cout + j];
      }
      const bool gx = xn->requires_grad, gw = wn->requires_grad;
      if (gx) xn->ensure_grad();
      if (gw) wn->ensure_grad();
      if (!gx && !gw) return;
      for (long t = 0; t < T; ++t) {
        const Real* grow = g + t * Cout;
        for (long k = 0; k < K; ++k) {
          const long src = t + (k - ctr) * dilation;
          if (src < 0 || src >= T) continue;
          const Real* xrow = xn->value.data() + src * Cin;
          const Real* wk = wn->value.data() + k * Cin * Cout;
          for (long c = 0; c < Cin; ++c) {
            if (gw) {
              Real* dw = wn->grad.data() + (k * Cin + c) * Cout;
              const Real xv = xrow[c];
              for (long j = 0; j < Cout; ++j) dw[j] += xv * grow[j];
            }
            if (gx) {
              const Real* wrow = wk + c * Cout;
              Real acc = 0;
              for (long j = 0; j < Cout; ++j) acc += wrow[j] * grow[j];
              xn->grad[src * Cin + c] += acc;
            }
          }
        }
      }
    };
  });
}

namespace detail {

// Shared normalization backward:
// dx = inv * (dy*gamma - mean(dy*gamma) - xhat * mean(dy*gamma * xhat))
struct NormDims {
  long groups;   // number of independent normalization groups
  long extent;   // elements per group
  long gstride;  // stride between consecutive elements of a group
  long gbase;    // stride between groups
};

}  // namespace detail

template <class Real>
Tensor<Real> norm_general(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                          bool per_channel, Real eps) {
  // per_channel=true: instance norm (stats over time, per column).
  // per_channel=false: layer norm (stats over channels, per row).
  if (x.rank() != 2) contract_fail("norm: expected rank-2, got " + shape_str(x.shape()));
  const long T = x.rows(), C = x.cols();
  if (gamma.numel() != C || beta.numel() != C)
    contract_fail("norm: affine shape mismatch, x " + shape_str(x.shape()) + " gamma " +
                  shape_str(gamma.shape()));
  const long groups = per_channel ? C : T;
  const long extent = per_channel ? T : C;
  auto out = detail::new_node<Real>({T, C});
  std::vector<Real> xhat(static_cast<size_t>(T * C));
  std::vector<Real> invstd(static_cast<size_t>(groups));
  for (long gidx = 0; gidx < groups; ++gidx) {
    const long base = per_channel ? gidx : gidx * C;
    const long stride = per_channel ? C : 1;
    double mean = 0;
    for (long e = 0; e < extent; ++e) mean += static_cast<double>(x.data()[base + e * stride]);
    mean /= extent;
    double var = 0;
    for (long e = 0; e < extent; ++e) {
      const double d = static_cast<double>(x.data()[base + e * stride]) - mean;
      var += d * d;
    }
    var /= extent;
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    invstd[gidx] = static_cast<Real>(inv);
    for (long e = 0; e < extent; ++e) {
      const long idx = base + e * stride;
      xhat[idx] = static_cast<Real>((static_cast<double>(x.data()[idx]) - mean) * inv);
    }
  }
  for (long t = 0; t < T; ++t)
    for (long c = 0; c < C; ++c)
      out->value[t * C + c] = xhat[t * C + c] * gamma.data()[c] + beta.data()[c];
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(
      out, {xn, gn, bn},
      [xn, gn, bn, o, T, C, per_channel, xhat = std::move(xhat), invstd = std::move(invstd)] {
        return [xn, gn, bn, o, T, C, per_channel, xhat, invstd] {
          const Real* g = o->grad.data();
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (long t = 0; t < T; ++t)
              for (long c = 0; c < C; ++c) gn->grad[c] += g[t * C + c] * xhat[t * C + c];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (long t = 0; t < T; ++t)
              for (long c = 0; c < C; ++c) bn->grad[c] += g[t * C + c];
          }
          if (!xn->requires_grad) return;
          xn->ensure_grad();
          const long groups = per_channel ? C : T;
          const long extent = per_channel ? T : C;
          for (long gidx = 0; gidx < groups; ++gidx) {
            const long base = per_channel ? gidx : gidx * C;
            const long stride = per_channel ? C : 1;
            double m1 = 0, m2 = 0;
            for (long e = 0; e < extent; ++e) {
              const long idx = base + e * stride;
              const long ch = idx % C;
              const double dyg = static_cast<double>(g[idx]) * gn->value[ch];
              m1 += dyg;
              m2 += dyg * xhat[idx];
            }
            m1 /= extent;
            m2 /= extent;
            for (long e = 0; e < extent; ++e) {
              const long idx = base + e * stride;
              const long ch = idx % C;
              const double dyg = static_cast<double>(g[idx]) * gn->value[ch];
              xn->grad[idx] += static_cast<Real>(invstd[gidx] * (dyg - m1 - xhat[idx] * m2));
            }
          }
        };
      });
}

// Normalizes each channel over the time axis.
template <class Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                           const Tensor<Real>& beta, Real eps = Real(1e-5)) {
  return norm_general(x, gamma, beta, true, eps);
}

// Normalizes each time step over the channel axis.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
  return norm_general(x, gamma, beta, false, eps);
}

// Single-head scaled dot-product attention where query position i attends
// only to positions j with |i - j| <= window - 1. window >= T gives full
// attention; window == 1 lets each position attend to itself only.
// Optionally exposes the dense [T, T] weight matrix for inspection.
template <class Real>
Tensor<Real> windowed_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                long window, std::vector<Real>* weights_out = nullptr) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.rows() != q.rows())
    contract_fail("windowed_attention: shape mismatch q " + shape_str(q.shape()) + " k " +
                  shape_str(k.shape()) + " v " + shape_str(v.shape()));
  if (window < 1) contract_fail("windowed_attention: window must be >= 1");
  const long T = q.rows(), D = q.cols(), Dv = v.cols();
  const Real scale = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(D)));
  auto out = detail::new_node<Real>({T, Dv});
  std::vector<long> lo(static_cast<size_t>(T)), hi(static_cast<size_t>(T));
  std::vector<long> off(static_cast<size_t>(T) + 1, 0);
  for (long i = 0; i < T; ++i) {
    lo[i] = std::max<long>(0, i - (window - 1));
    hi[i] = std::min<long>(T - 1, i + (window - 1));
    off[i + 1] = off[i] + (hi[i] - lo[i] + 1);
  }
  std::vector<Real> probs(static_cast<size_t>(off[T]));
  if (weights_out) weights_out->assign(static_cast<size_t>(T * T), Real(0));
  std::vector<Real> srow;
  for (long i = 0; i < T; ++i) {
    const long n = hi[i] - lo[i] + 1;
    srow.resize(static_cast<size_t>(n));
    const Real* qi = q.data() + i * D;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (long j = 0; j < n; ++j) {
      const Real* kj = k.data() + (lo[i] + j) * D;
      Real acc = 0;
      for (long d = 0; d < D; ++d) acc += qi[d] * kj[d];
      srow[j] = acc * scale;
      mx = std::max(mx, srow[j]);
    }
    double z = 0;
    for (long j = 0; j < n; ++j) {
      srow[j] = std::exp(srow[j] - mx);
      z += static_cast<double>(srow[j]);
    }
    const Real inv = static_cast<Real>(1.0 / z);
    Real* prow = probs.data() + off[i];
    Real* orow = out->value.data() + i * Dv;
    std::fill(orow, orow + Dv, Real(0));
    for (long j = 0; j < n; ++j) {
      prow[j] = srow[j] * inv;
      if (weights_out) (*weights_out)[i * T + lo[i] + j] = prow[j];
      const Real* vj = v.data() + (lo[i] + j) * Dv;
      const Real a = prow[j];
      for (long d = 0; d < Dv; ++d) orow[d] += a * vj[d];
    }
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(
      out, {qn, kn, vn},
      [qn, kn, vn, o, T, D, Dv, scale, lo = std::move(lo), hi = std::move(hi),
       off = std::move(off), probs = std::move(probs)] {
        return [qn, kn, vn, o, T, D, Dv, scale, lo, hi, off, probs] {
          const bool gq = qn->requires_grad, gk = kn->requires_grad, gv = vn->requires_grad;
          if (gq) qn->ensure_grad();
          if (gk) kn->ensure_grad();
          if (gv) vn->ensure_grad();
          std::vector<Real> dalpha;
          for (long i = 0; i < T; ++i) {
            const long n = hi[i] - lo[i] + 1;
            const Real* prow = probs.data() + off[i];
            const Real* grow = o->grad.data() + i * Dv;
            dalpha.resize(static_cast<size_t>(n));
            double dsum = 0;
            for (long j = 0; j < n; ++j) {
              const Real* vj = vn->value.data() + (lo[i] + j) * Dv;
              Real acc = 0;
              for (long d = 0; d < Dv; ++d) acc += grow[d] * vj[d];
              dalpha[j] = acc;
              dsum += static_cast<double>(prow[j]) * acc;
              if (gv) {
                Real* dv = vn->grad.data() + (lo[i] + j) * Dv;
                const Real a = prow[j];
                for (long d = 0; d < Dv; ++d) dv[d] += a * grow[d];
              }
            }
            if (!gq && !gk) continue;
            const Real* qi = qn->value.data() + i * D;
            for (long j = 0; j < n; ++j) {
              const Real ds = prow[j] * (dalpha[j] - static_cast<Real>(dsum)) * scale;
              const Real* kj = kn->value.data() + (lo[i] + j) * D;
              if (gq) {
                Real* dq = qn->grad.data() + i * D;
                for (long d = 0; d < D; ++d) dq[d] += ds * kj[d];
              }
              if (gk) {
                Real* dk = kn->grad.data() + (lo[i] + j) * D;
                for (long d = 0; d < D; ++d) dk[d] += ds * qi[d];
              }
            }
          }
        };
      });
}

// Rows of `table` selected by token id.
template <class Real>
Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<long>& ids) {
  if (table.rank() != 2) contract_fail("embedding: table must be rank-2");
  const long V = table.rows(), D = table.cols();
  const long L = static_cast<long>(ids.size());
  for (long id : ids)
    if (id < 0 || id >= V)
      contract_fail("embedding: id " + std::to_string(id) + " out of range [0," +
                    std::to_string(V) + ")");
  auto out = detail::new_node<Real>({L, D});
  for (long i = 0; i < L; ++i)
    std::copy(table.data() + ids[i] * D, table.data() + (ids[i] + 1) * D,
              out->value.begin() + i * D);
  auto tn = table.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {tn}, [tn, o, ids, L, D] {
    return [tn, o, ids, L, D] {
      tn->ensure_grad();
      for (long i = 0; i < L; ++i)
        for (long d = 0; d < D; ++d) tn->grad[ids[i] * D + d] += o->grad[i * D + d];
    };
  });
}

// -(1/T) * sum_t w[t] * logp[t, labels[t]]
template <class Real>
Tensor<Real> weighted_nll(const Tensor<Real>& logp, const std::vector<int>& labels,
                          const std::vector<Real>& frame_weights) {
  if (logp.rank() != 2) contract_fail("weighted_nll: expected rank-2 log-probabilities");
  const long T = logp.rows(), C = logp.cols();
  if (static_cast<long>(labels.size()) != T || static_cast<long>(frame_weights.size()) != T)
    contract_fail("weighted_nll: label length " + std::to_string(labels.size()) +
                  " does not match " + shape_str(logp.shape()));
  double acc = 0;
  for (long t = 0; t < T; ++t) {
    const int y = labels[t];
    if (y < 0 || y >= C) contract_fail("weighted_nll: label out of range");
    acc -= static_cast<double>(frame_weights[t]) * logp.data()[t * C + y];
  }
  auto out = detail::new_node<Real>({1});
  out->value[0] = static_cast<Real>(acc / T);
  auto ln = logp.node();
  TensorNode<Real>* o = out.get();
  return detail::attach<Real>(out, {ln}, [ln, o, labels, frame_weights, T, C] {
    return [ln, o, labels, frame_weights, T, C] {
      ln->ensure_grad();
      const Real g = o->grad[0];
      for (long t = 0; t < T; ++t)
        ln->grad[t * C + labels[t]] -= g * frame_weights[t] / static_cast<Real>(T);
    };
  });
}

}  // namespace tseg
