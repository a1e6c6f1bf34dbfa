#include "pathm3/optim.hpp"

#include <numbers>

namespace pathm3 {

double lr_at(std::size_t step, const Schedule& s) {
  if (s.warmup_steps > s.total_steps) fail(ErrorKind::RangeError, "warmup_steps exceeds total_steps");
  if (step > s.total_steps) {
    fail(ErrorKind::StepOutOfRange, "step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    const double t = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.warmup_lr + (s.base_lr - s.warmup_lr) * t;
  }
  const std::size_t decay = s.total_steps - s.warmup_steps;
  if (decay == 0) return s.base_lr;
  const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace pathm3
