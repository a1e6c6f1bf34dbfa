#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pathm3/graph.hpp"

namespace pathm3 {

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool all_passed = true;
};

// Builds a scalar computation on the supplied graph and returns its root.
template <typename Real>
using ScalarFn = std::function<Var<Real>(Graph<Real>&)>;

// Compares reverse-mode gradients of `f` against central differences
// (f(θ+h) − f(θ−h)) / 2h for every entry of every parameter. Relative error
// uses max(|analytic|, |numeric|, 1e-8) as denominator. Parameter values are
// restored afterwards; parameter grads hold the analytic gradient.
template <typename Real>
GradCheckReport grad_check(const ScalarFn<Real>& f, const std::vector<Parameter<Real>*>& params, double step, double tol);

template <typename Real>
GradCheckReport grad_check(const ScalarFn<Real>& f, ParameterStore<Real>& store, double step, double tol) {
  std::vector<Parameter<Real>*> params;
  for (auto& p : store) params.push_back(&p);
  return grad_check(f, params, step, tol);
}

}  // namespace pathm3
