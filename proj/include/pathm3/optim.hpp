#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pathm3/parameter.hpp"

namespace pathm3 {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

// Decoupled weight decay, then the bias-corrected Adam update.
template <typename Real>
void adamw_step(ParameterStore<Real>& store, OptimizerState& state, const AdamWConfig& cfg, double lr) {
  if (state.m.empty()) {
    for (const auto& p : store) {
      state.m.emplace_back(p.tensor.size(), 0.0);
      state.v.emplace_back(p.tensor.size(), 0.0);
    }
  }
  if (state.m.size() != store.size()) fail(ErrorKind::ShapeMismatch, "optimizer state does not match the parameter store");
  for (const auto& p : store) {
    if (!p.tensor.has_grad()) fail(ErrorKind::MissingGrad, "parameter '" + p.name + "' has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::size_t idx = 0;
  for (auto& p : store) {
    auto theta = p.tensor.values();
    auto grad = p.tensor.grad();
    auto& m = state.m[idx];
    auto& v = state.v[idx];
    ++idx;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      double x = theta[i];
      x -= lr * cfg.weight_decay * x;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      theta[i] = static_cast<Real>(x);
    }
  }
}

struct Schedule {
  double base_lr = 1e-4;
  double warmup_lr = 1e-5;
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 1000;
};

// Linear warmup from warmup_lr to base_lr, then cosine decay to zero.
double lr_at(std::size_t step, const Schedule& s);

}  // namespace pathm3
