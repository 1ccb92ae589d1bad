#include <algorithm>
#include <cmath>

#include "robustmtl/parallel.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

namespace {

using detail::Node;

void accumulate(Node& parent, const std::vector<double>& contrib) {
    for (size_t i = 0; i < contrib.size(); ++i) parent.grad[i] += contrib[i];
}

// Binary elementwise with scalar broadcast: shapes equal, or either side has
// one element.
struct BinaryPlan {
    Shape out_shape;
    std::int64_t n;
    bool a_scalar, b_scalar;
};

BinaryPlan plan_binary(const char* op, const Tensor& a, const Tensor& b) {
    BinaryPlan p{};
    p.a_scalar = a.numel() == 1;
    p.b_scalar = b.numel() == 1;
    if (a.shape() == b.shape()) {
        p.out_shape = a.shape();
    } else if (p.b_scalar) {
        p.out_shape = a.shape();
    } else if (p.a_scalar) {
        p.out_shape = b.shape();
    } else {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    p.n = numel_of(p.out_shape);
    return p;
}

template <class Fwd, class Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    const BinaryPlan p = plan_binary(name, a, b);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    std::vector<double> out(static_cast<size_t>(p.n));
    const bool as = p.a_scalar && p.n > 1, bs = p.b_scalar && p.n > 1;
    parallel_for(p.n, [&](std::int64_t i) {
        out[static_cast<size_t>(i)] = fwd(pa[as ? 0 : i], pb[bs ? 0 : i]);
    });
    return custom_op(name, p.out_shape, std::move(out), {a, b}, [as, bs, bwd](Node& n) {
        Node& na = *n.parents[0];
        Node& nb = *n.parents[1];
        const std::int64_t m = n.numel();
        const double* pa = na.data.data();
        const double* pb = nb.data.data();
        const double* g = n.grad.data();
        if (na.requires_grad) {
            if (as) {
                std::vector<double> tmp(static_cast<size_t>(m));
                parallel_for(m, [&](std::int64_t i) {
                    double ga, gb;
                    bwd(pa[0], pb[bs ? 0 : i], g[i], ga, gb);
                    tmp[static_cast<size_t>(i)] = ga;
                });
                na.grad[0] += deterministic_sum(tmp.data(), m);
            } else {
                parallel_for(m, [&](std::int64_t i) {
                    double ga, gb;
                    bwd(pa[i], pb[bs ? 0 : i], g[i], ga, gb);
                    na.grad[static_cast<size_t>(i)] += ga;
                });
            }
        }
        if (nb.requires_grad) {
            if (bs) {
                std::vector<double> tmp(static_cast<size_t>(m));
                parallel_for(m, [&](std::int64_t i) {
                    double ga, gb;
                    bwd(pa[as ? 0 : i], pb[0], g[i], ga, gb);
                    tmp[static_cast<size_t>(i)] = gb;
                });
                nb.grad[0] += deterministic_sum(tmp.data(), m);
            } else {
                parallel_for(m, [&](std::int64_t i) {
                    double ga, gb;
                    bwd(pa[as ? 0 : i], pb[i], g[i], ga, gb);
                    nb.grad[static_cast<size_t>(i)] += gb;
                });
            }
        }
    });
}

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
    const std::int64_t n = a.numel();
    const double* pa = a.data().data();
    std::vector<double> out(static_cast<size_t>(n));
    parallel_for(n, [&](std::int64_t i) { out[static_cast<size_t>(i)] = fwd(pa[i]); });
    return custom_op(name, a.shape(), std::move(out), {a}, [bwd](Node& n) {
        Node& na = *n.parents[0];
        if (!na.requires_grad) return;
        const double* x = na.data.data();
        const double* y = n.data.data();
        const double* g = n.grad.data();
        parallel_for(n.numel(), [&](std::int64_t i) {
            na.grad[static_cast<size_t>(i)] += bwd(x[i], y[i], g[i]);
        });
    });
}

struct AxisPlan {
    std::int64_t outer = 1, extent = 1, inner = 1;
    Shape reduced;
};

AxisPlan plan_axis(const char* op, const Tensor& a, int axis) {
    if (axis < 0 || axis >= a.ndim())
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for " + shape_str(a.shape()));
    AxisPlan p;
    for (int i = 0; i < a.ndim(); ++i) {
        if (i < axis)
            p.outer *= a.dim(i);
        else if (i > axis)
            p.inner *= a.dim(i);
        else
            p.extent = a.dim(i);
        if (i != axis) p.reduced.push_back(a.dim(i));
    }
    if (p.reduced.empty()) p.reduced = {1};
    return p;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& ga, double& gb) { ga = g, gb = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& ga, double& gb) { ga = g, gb = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& ga, double& gb) { ga = g * y, gb = g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& ga, double& gb) {
            ga = g / y;
            gb = -g * x / (y * y);
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "min", a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double g, double& ga, double& gb) {
            ga = x <= y ? g : 0.0;
            gb = x <= y ? 0.0 : g;
        });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "max", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double g, double& ga, double& gb) {
            ga = x >= y ? g : 0.0;
            gb = x >= y ? 0.0 : g;
        });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        "add_scalar", a, [c](double x) { return x + c; },
        [](double, double, double g) { return g; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary_op(
        "mul_scalar", a, [c](double x) { return x * c; },
        [c](double, double, double g) { return g * c; });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        "neg", a, [](double x) { return -x; }, [](double, double, double g) { return -g; });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
    return unary_op(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double, double g) { return g / x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Tensor elu(const Tensor& a) {
    return unary_op(
        "elu", a, [](double x) { return x > 0 ? x : std::expm1(x); },
        [](double x, double y, double g) { return x > 0 ? g : g * (y + 1.0); });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor reciprocal(const Tensor& a) {
    return unary_op(
        "reciprocal", a, [](double x) { return 1.0 / x; },
        [](double, double y, double g) { return -g * y * y; });
}

Tensor softmax(const Tensor& a, int axis) {
    const AxisPlan p = plan_axis("softmax", a, axis);
    const double* x = a.data().data();
    std::vector<double> out(static_cast<size_t>(a.numel()));
    parallel_for(p.outer * p.inner, [&](std::int64_t oi) {
        const std::int64_t o = oi / p.inner, i = oi % p.inner;
        const std::int64_t base = o * p.extent * p.inner + i;
        double mx = x[base];
        for (std::int64_t e = 1; e < p.extent; ++e)
            mx = std::max(mx, x[base + e * p.inner]);
        double z = 0.0;
        for (std::int64_t e = 0; e < p.extent; ++e) {
            const double v = std::exp(x[base + e * p.inner] - mx);
            out[static_cast<size_t>(base + e * p.inner)] = v;
            z += v;
        }
        for (std::int64_t e = 0; e < p.extent; ++e)
            out[static_cast<size_t>(base + e * p.inner)] /= z;
    });
    return custom_op("softmax", a.shape(), std::move(out), {a}, [p](Node& n) {
        Node& na = *n.parents[0];
        if (!na.requires_grad) return;
        const double* y = n.data.data();
        const double* g = n.grad.data();
        parallel_for(p.outer * p.inner, [&](std::int64_t oi) {
            const std::int64_t o = oi / p.inner, i = oi % p.inner;
            const std::int64_t base = o * p.extent * p.inner + i;
            double dot = 0.0;
            for (std::int64_t e = 0; e < p.extent; ++e) {
                const std::int64_t k = base + e * p.inner;
                dot += g[k] * y[k];
            }
            for (std::int64_t e = 0; e < p.extent; ++e) {
                const std::int64_t k = base + e * p.inner;
                na.grad[static_cast<size_t>(k)] += y[k] * (g[k] - dot);
            }
        });
    });
}

Tensor sum_all(const Tensor& a) {
    const double s = deterministic_sum(a.data().data(), a.numel());
    return custom_op("sum_all", {1}, {s}, {a}, [](Node& n) {
        Node& na = *n.parents[0];
        if (!na.requires_grad) return;
        const double g = n.grad[0];
        parallel_for(na.numel(), [&](std::int64_t i) { na.grad[static_cast<size_t>(i)] += g; });
    });
}

Tensor mean_all(const Tensor& a) {
    const std::int64_t m = a.numel();
    const double s = deterministic_sum(a.data().data(), m) / static_cast<double>(m);
    return custom_op("mean_all", {1}, {s}, {a}, [m](Node& n) {
        Node& na = *n.parents[0];
        if (!na.requires_grad) return;
        const double g = n.grad[0] / static_cast<double>(m);
        parallel_for(na.numel(), [&](std::int64_t i) { na.grad[static_cast<size_t>(i)] += g; });
    });
}

namespace {

Tensor reduce_axis(const char* name, const Tensor& a, int axis, bool mean) {
    const AxisPlan p = plan_axis(name, a, axis);
    const double* x = a.data().data();
    const double scale = mean ? 1.0 / static_cast<double>(p.extent) : 1.0;
    std::vector<double> out(static_cast<size_t>(p.outer * p.inner));
    parallel_for(p.outer * p.inner, [&](std::int64_t oi) {
        const std::int64_t o = oi / p.inner, i = oi % p.inner;
        const std::int64_t base = o * p.extent * p.inner + i;
        double s = 0.0;
        for (std::int64_t e = 0; e < p.extent; ++e) s += x[base + e * p.inner];
        out[static_cast<size_t>(oi)] = s * scale;
    });
    return custom_op(name, p.reduced, std::move(out), {a}, [p, scale](Node& n) {
        Node& na = *n.parents[0];
        if (!na.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(p.outer * p.inner, [&](std::int64_t oi) {
            const std::int64_t o = oi / p.inner, i = oi % p.inner;
            const std::int64_t base = o * p.extent * p.inner + i;
            const double gv = g[oi] * scale;
            for (std::int64_t e = 0; e < p.extent; ++e)
                na.grad[static_cast<size_t>(base + e * p.inner)] += gv;
        });
    });
}

}  // namespace

Tensor sum_axis(const Tensor& a, int axis) { return reduce_axis("sum_axis", a, axis, false); }
Tensor mean_axis(const Tensor& a, int axis) { return reduce_axis("mean_axis", a, axis, true); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Tensor& first = parts[0];
    if (axis < 0 || axis >= first.ndim()) throw DimensionError("concat: axis out of range");
    Shape out_shape = first.shape();
    std::int64_t total_extent = 0;
    for (const Tensor& t : parts) {
        if (t.ndim() != first.ndim()) throw DimensionError("concat: rank mismatch");
        for (int i = 0; i < t.ndim(); ++i)
            if (i != axis && t.dim(i) != first.dim(i))
                throw DimensionError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                                     shape_str(first.shape()));
        total_extent += t.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(total_extent);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first.dim(i);
    for (int i = axis + 1; i < first.ndim(); ++i) inner *= first.dim(i);

    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
    std::vector<std::int64_t> offsets;  // extent offset per part
    std::int64_t off = 0;
    for (const Tensor& t : parts) {
        offsets.push_back(off);
        const std::int64_t ext = t.dim(axis);
        const double* src = t.data().data();
        parallel_for(outer, [&](std::int64_t o) {
            for (std::int64_t e = 0; e < ext; ++e) {
                const double* s = src + (o * ext + e) * inner;
                double* d = out.data() + (o * total_extent + off + e) * inner;
                std::copy(s, s + inner, d);
            }
        });
        off += ext;
    }
    std::vector<Tensor> parent_vec(parts.begin(), parts.end());
    return custom_op("concat", out_shape, std::move(out), parent_vec,
                     [outer, inner, total_extent, offsets](Node& n) {
                         const double* g = n.grad.data();
                         for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                             Node& p = *n.parents[pi];
                             if (!p.requires_grad) continue;
                             const std::int64_t ext = p.numel() / (outer * inner);
                             const std::int64_t off = offsets[pi];
                             parallel_for(outer, [&](std::int64_t o) {
                                 for (std::int64_t e = 0; e < ext; ++e) {
                                     const double* s = g + (o * total_extent + off + e) * inner;
                                     double* d = p.grad.data() + (o * ext + e) * inner;
                                     for (std::int64_t i = 0; i < inner; ++i) d[i] += s[i];
                                 }
                             });
                         }
                     });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a.ndim()) throw DimensionError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > a.dim(axis))
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for axis extent " +
                             std::to_string(a.dim(axis)));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
    const std::int64_t ext = a.dim(axis);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<double> out(static_cast<size_t>(outer * len * inner));
    const double* src = a.data().data();
    parallel_for(outer, [&](std::int64_t o) {
        for (int e = 0; e < len; ++e) {
            const double* s = src + (o * ext + start + e) * inner;
            double* d = out.data() + (o * len + e) * inner;
            std::copy(s, s + inner, d);
        }
    });
    return custom_op("slice", out_shape, std::move(out), {a},
                     [outer, inner, ext, start, len](Node& n) {
                         Node& p = *n.parents[0];
                         if (!p.requires_grad) return;
                         const double* g = n.grad.data();
                         parallel_for(outer, [&](std::int64_t o) {
                             for (int e = 0; e < len; ++e) {
                                 const double* s = g + (o * len + e) * inner;
                                 double* d = p.grad.data() + (o * ext + start + e) * inner;
                                 for (std::int64_t i = 0; i < inner; ++i) d[i] += s[i];
                             }
                         });
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw DimensionError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                             shape_str(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return custom_op("reshape", std::move(shape), std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(n.numel(), [&](std::int64_t i) { p.grad[static_cast<size_t>(i)] += g[i]; });
    });
}

Tensor hflip(const Tensor& a) {
    if (a.ndim() < 1) throw DimensionError("hflip: rank 0");
    const std::int64_t w = a.dim(a.ndim() - 1);
    const std::int64_t rows = a.numel() / w;
    const double* src = a.data().data();
    std::vector<double> out(static_cast<size_t>(a.numel()));
    parallel_for(rows, [&](std::int64_t r) {
        const double* s = src + r * w;
        double* d = out.data() + r * w;
        for (std::int64_t i = 0; i < w; ++i) d[i] = s[w - 1 - i];
    });
    return custom_op("hflip", a.shape(), std::move(out), {a}, [w, rows](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(rows, [&](std::int64_t r) {
            const double* s = g + r * w;
            double* d = p.grad.data() + r * w;
            for (std::int64_t i = 0; i < w; ++i) d[w - 1 - i] += s[i];
        });
    });
}

Tensor upsample_nearest2(const Tensor& a) {
    if (a.ndim() != 4) throw DimensionError("upsample_nearest2: expected NCHW");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    Shape out_shape{N, C, 2 * H, 2 * W};
    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
    const double* src = a.data().data();
    parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
        const double* s = src + nc * H * W;
        double* d = out.data() + nc * 4 * H * W;
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w) d[h * 2 * W + w] = s[(h / 2) * W + (w / 2)];
    });
    return custom_op("upsample_nearest2", out_shape, std::move(out), {a}, [N, C, H, W](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
            const double* s = g + nc * 4 * H * W;
            double* d = p.grad.data() + nc * H * W;
            for (int h = 0; h < 2 * H; ++h)
                for (int w = 0; w < 2 * W; ++w) d[(h / 2) * W + (w / 2)] += s[h * 2 * W + w];
        });
    });
}

Tensor avg_pool2(const Tensor& a) {
    if (a.ndim() != 4) throw DimensionError("avg_pool2: expected NCHW");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (H % 2 || W % 2) throw DimensionError("avg_pool2: spatial dims must be even");
    const int OH = H / 2, OW = W / 2;
    Shape out_shape{N, C, OH, OW};
    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
    const double* src = a.data().data();
    parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
        const double* s = src + nc * H * W;
        double* d = out.data() + nc * OH * OW;
        for (int h = 0; h < OH; ++h)
            for (int w = 0; w < OW; ++w)
                d[h * OW + w] = 0.25 * (s[2 * h * W + 2 * w] + s[2 * h * W + 2 * w + 1] +
                                        s[(2 * h + 1) * W + 2 * w] + s[(2 * h + 1) * W + 2 * w + 1]);
    });
    return custom_op("avg_pool2", out_shape, std::move(out), {a}, [N, C, H, W, OH, OW](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
            const double* s = g + nc * OH * OW;
            double* d = p.grad.data() + nc * H * W;
            for (int h = 0; h < OH; ++h)
                for (int w = 0; w < OW; ++w) {
                    const double gv = 0.25 * s[h * OW + w];
                    d[2 * h * W + 2 * w] += gv;
                    d[2 * h * W + 2 * w + 1] += gv;
                    d[(2 * h + 1) * W + 2 * w] += gv;
                    d[(2 * h + 1) * W + 2 * w + 1] += gv;
                }
        });
    });
}

Tensor grad_scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    return custom_op("grad_scale", a.shape(), std::move(out), {a}, [factor](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(n.numel(), [&](std::int64_t i) {
            p.grad[static_cast<size_t>(i)] += factor * g[i];
        });
    });
}

}  // namespace rmtl
