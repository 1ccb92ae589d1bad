#include <algorithm>
#include <cmath>

#include "robustmtl/parallel.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

namespace {

using detail::Node;

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

struct ConvDims {
    int N, Ci, H, W, Co, KH, KW, OH, OW, stride, pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    if (input.ndim() != 4 || kernel.ndim() != 4)
        throw DimensionError("conv2d: expected NCHW input and OIHW kernel");
    ConvDims d{};
    d.N = input.dim(0), d.Ci = input.dim(1), d.H = input.dim(2), d.W = input.dim(3);
    d.Co = kernel.dim(0), d.KH = kernel.dim(2), d.KW = kernel.dim(3);
    d.stride = stride, d.pad = padding;
    if (kernel.dim(1) != d.Ci)
        throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                             " input channels, input has " + std::to_string(d.Ci));
    if (stride < 1 || padding < 0) throw DimensionError("conv2d: bad stride/padding");
    d.OH = (d.H + 2 * padding - d.KH) / stride + 1;
    d.OW = (d.W + 2 * padding - d.KW) / stride + 1;
    if (d.H + 2 * padding < d.KH || d.W + 2 * padding < d.KW || d.OH < 1 || d.OW < 1)
        throw DimensionError("conv2d: kernel larger than padded input");
    return d;
}

// Valid output range along one axis so that o*stride + k - pad lands inside
// [0, extent).
inline void valid_range(int k, int pad, int stride, int extent, int out_extent, int& lo, int& hi) {
    lo = static_cast<int>(std::max<std::int64_t>(0, ceil_div(pad - k, stride)));
    hi = static_cast<int>(std::min<std::int64_t>(out_extent - 1, (extent - 1 + pad - k) / stride));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
    const ConvDims d = conv_dims(input, kernel, stride, padding);
    const bool has_bias = bias.defined();
    if (has_bias && (bias.ndim() != 1 || bias.dim(0) != d.Co))
        throw DimensionError("conv2d: bias must have shape [out_channels]");

    const double* in = input.data().data();
    const double* wt = kernel.data().data();
    const double* bs = has_bias ? bias.data().data() : nullptr;
    Shape out_shape{d.N, d.Co, d.OH, d.OW};
    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));

    parallel_for(static_cast<std::int64_t>(d.N) * d.Co, [&](std::int64_t nco) {
        const int n = static_cast<int>(nco / d.Co);
        const int oc = static_cast<int>(nco % d.Co);
        double* oplane = out.data() + nco * d.OH * d.OW;
        const double bias_v = bs ? bs[oc] : 0.0;
        std::fill(oplane, oplane + d.OH * d.OW, bias_v);
        for (int ic = 0; ic < d.Ci; ++ic) {
            const double* iplane = in + (static_cast<std::int64_t>(n) * d.Ci + ic) * d.H * d.W;
            const double* kplane = wt + (static_cast<std::int64_t>(oc) * d.Ci + ic) * d.KH * d.KW;
            for (int kh = 0; kh < d.KH; ++kh) {
                int oh_lo, oh_hi;
                valid_range(kh, d.pad, d.stride, d.H, d.OH, oh_lo, oh_hi);
                for (int kw = 0; kw < d.KW; ++kw) {
                    const double w = kplane[kh * d.KW + kw];
                    if (w == 0.0) continue;
                    int ow_lo, ow_hi;
                    valid_range(kw, d.pad, d.stride, d.W, d.OW, ow_lo, ow_hi);
                    for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        const double* irow = iplane + ih * d.W + kw - d.pad;
                        double* orow = oplane + oh * d.OW;
                        for (int ow = ow_lo; ow <= ow_hi; ++ow)
                            orow[ow] += w * irow[ow * d.stride];
                    }
                }
            }
        }
    });

    std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{input, kernel, bias}
                                           : std::vector<Tensor>{input, kernel};
    return custom_op("conv2d", out_shape, std::move(out), parents, [d, has_bias](Node& node) {
        Node& nin = *node.parents[0];
        Node& nk = *node.parents[1];
        const double* gout = node.grad.data();
        const double* in = nin.data.data();
        const double* wt = nk.data.data();

        if (nin.requires_grad) {
            // scatter into one (n, ic) plane per task; planes are disjoint
            parallel_for(static_cast<std::int64_t>(d.N) * d.Ci, [&](std::int64_t nci) {
                const int n = static_cast<int>(nci / d.Ci);
                const int ic = static_cast<int>(nci % d.Ci);
                double* gplane = nin.grad.data() + nci * d.H * d.W;
                for (int oc = 0; oc < d.Co; ++oc) {
                    const double* goplane =
                        gout + (static_cast<std::int64_t>(n) * d.Co + oc) * d.OH * d.OW;
                    const double* kplane =
                        wt + (static_cast<std::int64_t>(oc) * d.Ci + ic) * d.KH * d.KW;
                    for (int kh = 0; kh < d.KH; ++kh) {
                        int oh_lo, oh_hi;
                        valid_range(kh, d.pad, d.stride, d.H, d.OH, oh_lo, oh_hi);
                        for (int kw = 0; kw < d.KW; ++kw) {
                            const double w = kplane[kh * d.KW + kw];
                            if (w == 0.0) continue;
                            int ow_lo, ow_hi;
                            valid_range(kw, d.pad, d.stride, d.W, d.OW, ow_lo, ow_hi);
                            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int ih = oh * d.stride + kh - d.pad;
                                double* grow = gplane + ih * d.W + kw - d.pad;
                                const double* gorow = goplane + oh * d.OW;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    grow[ow * d.stride] += w * gorow[ow];
                            }
                        }
                    }
                }
            });
        }

        if (nk.requires_grad) {
            parallel_for(static_cast<std::int64_t>(d.Co) * d.Ci, [&](std::int64_t coci) {
                const int oc = static_cast<int>(coci / d.Ci);
                const int ic = static_cast<int>(coci % d.Ci);
                double* gk = nk.grad.data() + coci * d.KH * d.KW;
                for (int kh = 0; kh < d.KH; ++kh) {
                    int oh_lo, oh_hi;
                    valid_range(kh, d.pad, d.stride, d.H, d.OH, oh_lo, oh_hi);
                    for (int kw = 0; kw < d.KW; ++kw) {
                        int ow_lo, ow_hi;
                        valid_range(kw, d.pad, d.stride, d.W, d.OW, ow_lo, ow_hi);
                        double acc = 0.0;
                        for (int n = 0; n < d.N; ++n) {
                            const double* goplane =
                                gout + (static_cast<std::int64_t>(n) * d.Co + oc) * d.OH * d.OW;
                            const double* iplane =
                                in + (static_cast<std::int64_t>(n) * d.Ci + ic) * d.H * d.W;
                            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int ih = oh * d.stride + kh - d.pad;
                                const double* irow = iplane + ih * d.W + kw - d.pad;
                                const double* gorow = goplane + oh * d.OW;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    acc += gorow[ow] * irow[ow * d.stride];
                            }
                        }
                        gk[kh * d.KW + kw] += acc;
                    }
                }
            });
        }

        if (has_bias && node.parents[2]->requires_grad) {
            Node& nb = *node.parents[2];
            parallel_for(d.Co, [&](std::int64_t oc) {
                double acc = 0.0;
                for (int n = 0; n < d.N; ++n) {
                    const double* goplane =
                        gout + (static_cast<std::int64_t>(n) * d.Co + oc) * d.OH * d.OW;
                    for (int i = 0; i < d.OH * d.OW; ++i) acc += goplane[i];
                }
                nb.grad[static_cast<size_t>(oc)] += acc;
            });
        }
    });
}

}  // namespace rmtl
