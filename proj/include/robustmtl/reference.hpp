#pragma once

#include <cstdint>
#include <vector>

namespace rmtl::ref {

// Serial, loop-literal reference kernels. These are the oracles the tests
// compare the parallel operators against and the baseline for the kernel
// benchmark. Deliberately naive; do not optimize.

// 6-loop direct cross-correlation. in: N*Ci*H*W, k: Co*Ci*KH*KW,
// bias: Co or empty, out: N*Co*OH*OW with OH = (H+2p-KH)/s+1.
void conv2d(const double* in, int N, int Ci, int H, int W, const double* k, int Co, int KH, int KW,
            const double* bias, int stride, int pad, double* out);

// Per-pixel 4-corner weighted bilinear sample with border clamp.
// src: N*C*H*W, grid: N*GH*GW*2 (x then y), out: N*C*GH*GW.
void bilinear_sample(const double* src, int N, int C, int H, int W, const double* grid, int GH,
                     int GW, double* out);

// 3x3 mean filter with replicate border, same-size output.
void box_filter3(const double* src, int N, int C, int H, int W, double* out);

// Plain left-to-right accumulation.
double sum(const double* x, std::int64_t n);

}  // namespace rmtl::ref
