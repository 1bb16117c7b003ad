#include "privdistil/train/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "privdistil/common/error.hpp"

namespace privdistil::train {

double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak) {
  if (warmup_steps < 0 || warmup_steps >= total_steps) {
    throw ArgumentError("lr_at needs 0 <= warmup_steps < total_steps (got " + std::to_string(warmup_steps) + ", " +
                        std::to_string(total_steps) + ")");
  }
  if (step < 0 || step > total_steps) {
    throw ArgumentError("lr_at step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step == total_steps) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace privdistil::train
