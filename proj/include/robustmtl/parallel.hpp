#pragma once

#include <cstdint>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rmtl {

// Global worker count for the OpenMP kernels. All kernels are written so
// their results are bit-identical for any thread count: independent output
// elements are partitioned statically, and reductions combine fixed-size
// chunk partials in index order.
void set_num_threads(int n);
int num_threads();

template <class F>
void parallel_for(std::int64_t n, F&& body) {
    const int t = num_threads();
#ifdef _OPENMP
    if (t > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(t)
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) body(i);
}

inline constexpr std::int64_t kSumChunk = 4096;

// Deterministic chunked summation: partial sums per fixed 4096-element
// chunk, combined serially in chunk order.
double deterministic_sum(const double* x, std::int64_t n);

}  // namespace rmtl
