#pragma once

// Parameter registry, layers, and the optimizer shared by all learned
// modules. Registration order is the construction order, which keeps
// checkpoints and optimizer state deterministic.

#include <string>
#include <vector>

#include "tseg/tensor.hpp"

namespace tseg {

template <class Real>
struct Param {
  std::string name;
  Tensor<Real> value;
};

template <class Real>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed) : rng_(seed) {}

  // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Tensor<Real> uniform_init(const std::string& name, std::vector<long> shape, long fan_in) {
    Tensor<Real> t = Tensor<Real>::zeros(std::move(shape), true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Real* p = t.data();
    const long n = t.numel();
    for (long i = 0; i < n; ++i) p[i] = static_cast<Real>(rng_.uniform(-bound, bound));
    params_.push_back({name, t});
    return t;
  }

  Tensor<Real> constant_init(const std::string& name, std::vector<long> shape, Real v) {
    Tensor<Real> t = Tensor<Real>::filled(std::move(shape), v, true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<Param<Real>>& params() { return params_; }
  const std::vector<Param<Real>>& params() const { return params_; }

  Tensor<Real> find(const std::string& name) const {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    contract_fail("parameter not found: " + name);
  }

  long total_elements() const {
    long n = 0;
    for (auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  std::vector<Param<Real>> params_;
  Rng rng_;
};

template <class Real>
struct Linear {
  Tensor<Real> w, b;
  Linear() = default;
  Linear(ParamStore<Real>& ps, const std::string& name, long in, long out)
      : w(ps.uniform_init(name + ".w", {in, out}, in)),
        b(ps.uniform_init(name + ".b", {out}, in)) {}
  Tensor<Real> forward(const Tensor<Real>& x) const { return add_rowvec(matmul(x, w), b); }
};

template <class Real>
struct DilatedConv {
  Tensor<Real> w, b;
  long dilation = 1;
  DilatedConv() = default;
  DilatedConv(ParamStore<Real>& ps, const std::string& name, long k, long cin, long cout, long dil)
      : w(ps.uniform_init(name + ".w", {k, cin, cout}, k * cin)),
        b(ps.uniform_init(name + ".b", {cout}, k * cin)),
        dilation(dil) {}
  Tensor<Real> forward(const Tensor<Real>& x) const { return conv1d(x, w, b, dilation); }
};

template <class Real>
struct InstanceNorm {
  Tensor<Real> gamma, beta;
  InstanceNorm() = default;
  InstanceNorm(ParamStore<Real>& ps, const std::string& name, long channels)
      : gamma(ps.constant_init(name + ".g", {channels}, Real(1))),
        beta(ps.constant_init(name + ".b", {channels}, Real(0))) {}
  Tensor<Real> forward(const Tensor<Real>& x) const { return instance_norm(x, gamma, beta); }
};

template <class Real>
struct LayerNorm {
  Tensor<Real> gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore<Real>& ps, const std::string& name, long channels)
      : gamma(ps.constant_init(name + ".g", {channels}, Real(1))),
        beta(ps.constant_init(name + ".b", {channels}, Real(0))) {}
  Tensor<Real> forward(const Tensor<Real>& x) const { return layer_norm(x, gamma, beta); }
};

// Adam with decoupled weight decay.
template <class Real>
class AdamW {
 public:
  struct Config {
    Real lr = Real(5e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
    Real weight_decay = Real(1e-5);
  };

  AdamW(ParamStore<Real>& store, Config cfg = {}) : store_(&store), cfg_(cfg) {
    for (auto& p : store.params()) {
      m_.emplace_back(p.value.numel(), Real(0));
      v_.emplace_back(p.value.numel(), Real(0));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t_);
    auto& params = store_->params();
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<Real>& p = params[i].value;
      if (!p.has_grad()) continue;
      const std::vector<Real>& g = p.grad();
      Real* w = p.data();
      Real* m = m_[i].data();
      Real* v = v_[i].data();
      const long n = p.numel();
      for (long j = 0; j < n; ++j) {
        m[j] = cfg_.beta1 * m[j] + (Real(1) - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (Real(1) - cfg_.beta2) * g[j] * g[j];
        const Real mhat = m[j] / static_cast<Real>(bc1);
        const Real vhat = v[j] / static_cast<Real>(bc2);
        w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
      }
    }
    store_->zero_grad();
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<std::vector<Real>>& first_moments() { return m_; }
  std::vector<std::vector<Real>>& second_moments() { return v_; }
  const Config& config() const { return cfg_; }

 private:
  ParamStore<Real>* store_;
  Config cfg_;
  std::vector<std::vector<Real>> m_, v_;
  long t_ = 0;
};

}  // namespace tseg
