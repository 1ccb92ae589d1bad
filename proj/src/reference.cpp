#include "robustmtl/reference.hpp"

#include <algorithm>
#include <cmath>

namespace rmtl::ref {

void conv2d(const double* in, int N, int Ci, int H, int W, const double* k, int Co, int KH, int KW,
            const double* bias, int stride, int pad, double* out) {
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < Co; ++oc)
            for (int oh = 0; oh < OH; ++oh)
                for (int ow = 0; ow < OW; ++ow) {
                    double acc = bias ? bias[oc] : 0.0;
                    for (int ic = 0; ic < Ci; ++ic)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw) {
                                const int ih = oh * stride + kh - pad;
                                const int iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += k[((oc * Ci + ic) * KH + kh) * KW + kw] *
                                       in[((static_cast<std::int64_t>(n) * Ci + ic) * H + ih) * W + iw];
                            }
                    out[((static_cast<std::int64_t>(n) * Co + oc) * OH + oh) * OW + ow] = acc;
                }
}

void bilinear_sample(const double* src, int N, int C, int H, int W, const double* grid, int GH,
                     int GW, double* out) {
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int gh = 0; gh < GH; ++gh)
                for (int gw = 0; gw < GW; ++gw) {
                    const double* gp = grid + ((static_cast<std::int64_t>(n) * GH + gh) * GW + gw) * 2;
                    const double x = std::clamp(gp[0], 0.0, static_cast<double>(W - 1));
                    const double y = std::clamp(gp[1], 0.0, static_cast<double>(H - 1));
                    const int x0 = static_cast<int>(std::floor(x));
                    const int y0 = static_cast<int>(std::floor(y));
                    const int x1 = std::min(x0 + 1, W - 1);
                    const int y1 = std::min(y0 + 1, H - 1);
                    const double fx = x - x0, fy = y - y0;
                    const double* p = src + (static_cast<std::int64_t>(n) * C + c) * H * W;
                    const double v = (1 - fy) * ((1 - fx) * p[y0 * W + x0] + fx * p[y0 * W + x1]) +
                                     fy * ((1 - fx) * p[y1 * W + x0] + fx * p[y1 * W + x1]);
                    out[((static_cast<std::int64_t>(n) * C + c) * GH + gh) * GW + gw] = v;
                }
}

void box_filter3(const double* src, int N, int C, int H, int W, double* out) {
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    double acc = 0.0;
                    for (int dh = -1; dh <= 1; ++dh)
                        for (int dw = -1; dw <= 1; ++dw) {
                            const int hh = std::clamp(h + dh, 0, H - 1);
                            const int ww = std::clamp(w + dw, 0, W - 1);
                            acc += src[((static_cast<std::int64_t>(n) * C + c) * H + hh) * W + ww];
                        }
                    out[((static_cast<std::int64_t>(n) * C + c) * H + h) * W + w] = acc / 9.0;
                }
}

double sum(const double* x, std::int64_t n) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}

}  // namespace rmtl::ref
