#include "pathm3/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace pathm3 {

namespace {

template <typename Real>
Real evaluate(const ScalarFn<Real>& f) {
  Graph<Real> g;
  Var<Real> root = f(g);
  if (root.value().size() != 1) fail(ErrorKind::NotScalar, "grad_check: function is not scalar-valued");
  return root.value()[0];
}

}  // namespace

template <typename Real>
GradCheckReport grad_check(const ScalarFn<Real>& f, const std::vector<Parameter<Real>*>& params, double step,
                           double tol) {
  if (!(step > 0.0)) fail(ErrorKind::RangeError, "grad_check: step must be positive");

  for (auto* p : params) p->tensor.clear_grad();
  {
    Graph<Real> g;
    Var<Real> root = f(g);
    if (root.value().size() != 1) fail(ErrorKind::NotScalar, "grad_check: function is not scalar-valued");
    if (g.requires_grad(root.id)) g.backward(root);
  }
  const Real base_a = evaluate(f);
  const Real base_b = evaluate(f);
  if (std::memcmp(&base_a, &base_b, sizeof(Real)) != 0) {
    fail(ErrorKind::NonDeterministic, "grad_check: two evaluations at identical parameters differ");
  }

  GradCheckReport report;
  for (auto* p : params) {
    GradCheckEntry entry;
    entry.name = p->name;
    entry.size = p->tensor.size();
    const std::vector<Real> analytic = p->tensor.has_grad()
                                           ? std::vector<Real>(p->tensor.grad().begin(), p->tensor.grad().end())
                                           : std::vector<Real>(p->tensor.size(), Real(0));
    auto values = p->tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real original = values[i];
      values[i] = static_cast<Real>(original + step);
      const double up = evaluate(f);
      values[i] = static_cast<Real>(original - step);
      const double down = evaluate(f);
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (i == 0 || rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    entry.passed = entry.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.all_passed = report.all_passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport grad_check<float>(const ScalarFn<float>&, const std::vector<Parameter<float>*>&, double,
                                           double);
template GradCheckReport grad_check<double>(const ScalarFn<double>&, const std::vector<Parameter<double>*>&, double,
                                            double);

}  // namespace pathm3
