#pragma once

#include <functional>

#include "robustmtl/tensor.hpp"

namespace rmtl {

struct GradCheckResult {
    bool pass = false;
    double max_rel_error = 0.0;
    int checked = 0;
};

// Compares the recorded backward pass against central finite differences,
// coordinate by coordinate. `build` must map the leaf tensor to a scalar
// loss deterministically. For tensors above `max_coords` elements a random
// coordinate subset of that size is checked (seeded, >= 64 by default).
// Relative error uses max(|analytic|, |numeric|, 1) as the scale; `step`
// defaults to 1e-5, intended for unit-scale data.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& build, const Tensor& x,
                           double tol, double step = 1e-5, int max_coords = 64,
                           std::uint64_t seed = 0x9d2c5680);

}  // namespace rmtl
