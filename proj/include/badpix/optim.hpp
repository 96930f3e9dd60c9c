#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "badpix/common.hpp"
#include "badpix/graph.hpp"

namespace badpix {

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

struct LrSchedule {
  enum class Kind { constant, step, warmup_cosine };
  Kind kind = Kind::constant;
  double base_lr = 0.001;
  double step_decay = 0.5;
  int step_period = 10;
  int warmup_epochs = 5;
  int total_epochs = 50;

  static LrSchedule constant(double lr) {
    LrSchedule s;
    s.kind = Kind::constant;
    s.base_lr = lr;
    return s;
  }
  static LrSchedule step(double lr, double decay = 0.5, int period = 10) {
    LrSchedule s;
    s.kind = Kind::step;
    s.base_lr = lr;
    s.step_decay = decay;
    s.step_period = period;
    return s;
  }
  static LrSchedule warmup_cosine(double lr, int warmup, int total) {
    LrSchedule s;
    s.kind = Kind::warmup_cosine;
    s.base_lr = lr;
    s.warmup_epochs = warmup;
    s.total_epochs = total;
    return s;
  }
};

inline double lr_at(const LrSchedule& s, int epoch) {
  if (s.base_lr <= 0.0) throw ConfigError("base_lr must be positive");
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  switch (s.kind) {
    case LrSchedule::Kind::constant:
      return s.base_lr;
    case LrSchedule::Kind::step:
      return s.base_lr * std::pow(s.step_decay, epoch / s.step_period);
    case LrSchedule::Kind::warmup_cosine: {
      if (s.warmup_epochs >= s.total_epochs)
        throw ConfigError("warmup epochs must be < total epochs");
      if (epoch < s.warmup_epochs)
        return s.base_lr * static_cast<double>(epoch + 1) / s.warmup_epochs;
      const double t = static_cast<double>(epoch - s.warmup_epochs) /
                       static_cast<double>(s.total_epochs - s.warmup_epochs);
      return s.base_lr * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
    }
  }
  return s.base_lr;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Adam with the usual defaults. Rejects non-finite gradients, naming the
/// offending parameter.
template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over all graph parameters; grad_scale folds the 1/batch
  /// factor of gradient accumulation into the step.
  void step(Graph<T>& g, double lr, double grad_scale = 1.0) {
    ensure_state(g);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const auto& ids = g.params();
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      auto& node = g.node(ids[pi]);
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < node.val.v.size(); ++i) {
        const double gr = static_cast<double>(node.grad.v[i]) * grad_scale;
        if (!std::isfinite(gr))
          throw NumericError("non-finite gradient in parameter '" +
                             node.name + "'");
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gr;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gr * gr;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        node.val.v[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;

  void ensure_state(const Graph<T>& g) {
    if (!m_.empty()) return;
    const auto& ids = g.params();
    m_.resize(ids.size());
    v_.resize(ids.size());
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::size_t n = g.node(ids[pi]).val.v.size();
      m_[pi].assign(n, 0.0);
      v_[pi].assign(n, 0.0);
    }
  }
};

/// Plain SGD with momentum.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  void step(Graph<T>& g, double lr, double grad_scale = 1.0) {
    const auto& ids = g.params();
    if (vel_.empty()) {
      vel_.resize(ids.size());
      for (std::size_t pi = 0; pi < ids.size(); ++pi)
        vel_[pi].assign(g.node(ids[pi]).val.v.size(), 0.0);
    }
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      auto& node = g.node(ids[pi]);
      auto& vel = vel_[pi];
      for (std::size_t i = 0; i < node.val.v.size(); ++i) {
        const double gr = static_cast<double>(node.grad.v[i]) * grad_scale;
        if (!std::isfinite(gr))
          throw NumericError("non-finite gradient in parameter '" +
                             node.name + "'");
        vel[i] = momentum_ * vel[i] + gr;
        node.val.v[i] -= static_cast<T>(lr * vel[i]);
      }
    }
  }

 private:
  double momentum_;
  std::vector<std::vector<double>> vel_;
};

}  // namespace badpix
