#pragma once

// Adam with bias correction over a named parameter group. Moments are exposed
// by name so checkpoints can persist optimizer state for exact resume.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "glta/errors.hpp"
#include "glta/tensor.hpp"

namespace glta::nd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Adam {
 public:
  struct Slot {
    std::string name;
    Tensor<S> param;
    std::vector<S> m, v;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void add_param(const std::string& name, Tensor<S> p) {
    if (!p.defined() || !p.requires_grad())
      throw ContractError("adam: parameter '" + name + "' must require grad");
    Slot s;
    s.name = name;
    s.m.assign(static_cast<size_t>(p.numel()), S(0));
    s.v.assign(static_cast<size_t>(p.numel()), S(0));
    s.param = std::move(p);
    slots_.push_back(std::move(s));
  }

  // One update with bias correction; gradients are zeroed afterwards.
  void step() {
    for (const Slot& s : slots_)
      if (!s.param.has_grad())
        throw ContractError("adam_step: missing gradient for parameter '" + s.name + "'");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
      auto& pv = s.param.values();
      auto& g = s.param.grad();
      for (size_t i = 0; i < pv.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double m = cfg_.beta1 * static_cast<double>(s.m[i]) + (1.0 - cfg_.beta1) * gi;
        const double v = cfg_.beta2 * static_cast<double>(s.v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        s.m[i] = static_cast<S>(m);
        s.v[i] = static_cast<S>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        pv[i] = static_cast<S>(static_cast<double>(pv[i]) -
                               cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
      s.param.zero_grad();
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) {
    if (t < 0) throw ContractError("adam: negative step count");
    t_ = t;
  }

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  size_t size() const { return slots_.size(); }
  const std::vector<Slot>& slots() const { return slots_; }

  Slot* find(const std::string& name) {
    for (Slot& s : slots_)
      if (s.name == name) return &s;
    return nullptr;
  }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace glta::nd
