#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"

namespace spen {

enum class OptKind { adam, sgd_momentum };

struct OptConfig {
  OptKind kind = OptKind::adam;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
};

// Adam and SGD-with-momentum over a fixed parameter list. Accumulators are
// keyed by tensor identity and sized lazily to match each parameter.
class Optimizer {
 public:
  explicit Optimizer(OptConfig cfg) : cfg_(cfg) {}

  const OptConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(std::span<const ad::TensorPtr> params) {
    for (const auto& p : params) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (double g : p->grad) {
        if (!std::isfinite(g)) {
          throw NumericError(msg_cat("optimizer: non-finite gradient for '", p->name, "'"));
        }
      }
    }
    if (cfg_.kind == OptKind::adam) {
      ++t_;
      double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (const auto& p : params) {
        if (!p->requires_grad) continue;
        auto& s = slot(p);
        for (size_t i = 0; i < p->data.size(); ++i) {
          double g = p->grad[i];
          s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
          s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
          double mhat = s.m[i] / bc1;
          double vhat = s.v[i] / bc2;
          p->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    } else {
      // v <- mu * v - lr * g ; p <- p + v
      for (const auto& p : params) {
        if (!p->requires_grad) continue;
        auto& s = slot(p);
        for (size_t i = 0; i < p->data.size(); ++i) {
          s.m[i] = cfg_.momentum * s.m[i] - cfg_.lr * p->grad[i];
          p->data[i] += s.m[i];
        }
      }
    }
    for (const auto& p : params) {
      if (!p->requires_grad) continue;
      check_finite(p->data, msg_cat("parameter '", p->name, "' after update"));
    }
  }

  void reset() {
    slots_.clear();
    t_ = 0;
  }

 private:
  struct Slot {
    std::vector<double> m;  // first moment / velocity
    std::vector<double> v;  // second moment (adam only)
  };

  Slot& slot(const ad::TensorPtr& p) {
    auto& s = slots_[p.get()];
    if (s.m.size() != p->data.size()) {
      s.m.assign(p->data.size(), 0.0);
      s.v.assign(p->data.size(), 0.0);
    }
    return s;
  }

  OptConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<const ad::Tensor*, Slot> slots_;
};

}  // namespace spen
