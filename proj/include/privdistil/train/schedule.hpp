#pragma once

#include <cstdint>

namespace privdistil::train {

/// Linear warmup from 0 to `peak` over `warmup_steps`, then half-cosine decay to exactly 0
/// at `total_steps`. Throws ArgumentError unless 0 <= step <= total_steps and
/// 0 <= warmup_steps < total_steps.
double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double peak);

}  // namespace privdistil::train
