#include <algorithm>
#include <cmath>
#include <limits>

#include "robustmtl/parallel.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

namespace {

using detail::Node;

struct Corner {
    int x0, x1, y0, y1;
    double fx, fy;
    bool x_free, y_free;  // false when the coordinate was clamped
};

inline Corner locate(double x, double y, int W, int H) {
    Corner c{};
    if (!std::isfinite(x) || !std::isfinite(y)) {
        // poisoned coordinates: keep indices safe, let NaN reach the output
        c.fx = c.fy = std::numeric_limits<double>::quiet_NaN();
        c.x1 = c.y1 = 0;
        return c;
    }
    c.x_free = x > 0.0 && x < W - 1;
    c.y_free = y > 0.0 && y < H - 1;
    const double xc = std::clamp(x, 0.0, static_cast<double>(W - 1));
    const double yc = std::clamp(y, 0.0, static_cast<double>(H - 1));
    c.x0 = static_cast<int>(std::floor(xc));
    c.y0 = static_cast<int>(std::floor(yc));
    c.x1 = std::min(c.x0 + 1, W - 1);
    c.y1 = std::min(c.y0 + 1, H - 1);
    c.fx = xc - c.x0;
    c.fy = yc - c.y0;
    return c;
}

}  // namespace

Tensor grid_sample(const Tensor& source, const Tensor& grid) {
    if (source.ndim() != 4) throw DimensionError("grid_sample: source must be NCHW");
    if (grid.ndim() != 4 || grid.dim(3) != 2)
        throw DimensionError("grid_sample: grid must be N x H x W x 2");
    if (grid.dim(0) != source.dim(0))
        throw DimensionError("grid_sample: batch mismatch");
    const int N = source.dim(0), C = source.dim(1), H = source.dim(2), W = source.dim(3);
    const int GH = grid.dim(1), GW = grid.dim(2);

    const double* src = source.data().data();
    const double* g = grid.data().data();
    Shape out_shape{N, C, GH, GW};
    std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));

    parallel_for(static_cast<std::int64_t>(N) * GH * GW, [&](std::int64_t idx) {
        const int n = static_cast<int>(idx / (GH * GW));
        const int pix = static_cast<int>(idx % (GH * GW));
        const double* gp = g + (static_cast<std::int64_t>(n) * GH * GW + pix) * 2;
        const Corner c = locate(gp[0], gp[1], W, H);
        for (int ch = 0; ch < C; ++ch) {
            const double* plane = src + (static_cast<std::int64_t>(n) * C + ch) * H * W;
            const double v00 = plane[c.y0 * W + c.x0];
            const double v01 = plane[c.y0 * W + c.x1];
            const double v10 = plane[c.y1 * W + c.x0];
            const double v11 = plane[c.y1 * W + c.x1];
            out[(static_cast<std::int64_t>(n) * C + ch) * GH * GW + pix] =
                (1 - c.fy) * ((1 - c.fx) * v00 + c.fx * v01) +
                c.fy * ((1 - c.fx) * v10 + c.fx * v11);
        }
    });

    return custom_op("grid_sample", out_shape, std::move(out), {source, grid},
                     [N, C, H, W, GH, GW](Node& node) {
                         Node& nsrc = *node.parents[0];
                         Node& ngrid = *node.parents[1];
                         const double* src = nsrc.data.data();
                         const double* g = ngrid.data.data();
                         const double* go = node.grad.data();

                         if (nsrc.requires_grad) {
                             // scatter per (n, c) plane; planes are disjoint
                             parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
                                 const int n = static_cast<int>(nc / C);
                                 double* gplane = nsrc.grad.data() + nc * H * W;
                                 const double* goplane = go + nc * GH * GW;
                                 const double* gbase = g + static_cast<std::int64_t>(n) * GH * GW * 2;
                                 for (int pix = 0; pix < GH * GW; ++pix) {
                                     const Corner c = locate(gbase[pix * 2], gbase[pix * 2 + 1], W, H);
                                     const double gv = goplane[pix];
                                     gplane[c.y0 * W + c.x0] += gv * (1 - c.fy) * (1 - c.fx);
                                     gplane[c.y0 * W + c.x1] += gv * (1 - c.fy) * c.fx;
                                     gplane[c.y1 * W + c.x0] += gv * c.fy * (1 - c.fx);
                                     gplane[c.y1 * W + c.x1] += gv * c.fy * c.fx;
                                 }
                             });
                         }

                         if (ngrid.requires_grad) {
                             parallel_for(static_cast<std::int64_t>(N) * GH * GW,
                                          [&](std::int64_t idx) {
                                              const int n = static_cast<int>(idx / (GH * GW));
                                              const int pix = static_cast<int>(idx % (GH * GW));
                                              const Corner c = locate(g[idx * 2], g[idx * 2 + 1], W, H);
                                              double dx = 0.0, dy = 0.0;
                                              for (int ch = 0; ch < C; ++ch) {
                                                  const double* plane =
                                                      src + (static_cast<std::int64_t>(n) * C + ch) * H * W;
                                                  const double v00 = plane[c.y0 * W + c.x0];
                                                  const double v01 = plane[c.y0 * W + c.x1];
                                                  const double v10 = plane[c.y1 * W + c.x0];
                                                  const double v11 = plane[c.y1 * W + c.x1];
                                                  const double gv =
                                                      node.grad[(static_cast<std::int64_t>(n) * C + ch) *
                                                                    GH * GW +
                                                                pix];
                                                  dx += gv * ((1 - c.fy) * (v01 - v00) +
                                                              c.fy * (v11 - v10));
                                                  dy += gv * ((1 - c.fx) * (v10 - v00) +
                                                              c.fx * (v11 - v01));
                                              }
                                              if (c.x_free) ngrid.grad[idx * 2] += dx;
                                              if (c.y_free) ngrid.grad[idx * 2 + 1] += dy;
                                          });
                         }
                     });
}

Tensor box_filter3(const Tensor& a) {
    if (a.ndim() != 4) throw DimensionError("box_filter3: expected NCHW");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    const double* src = a.data().data();
    std::vector<double> out(static_cast<size_t>(a.numel()));
    const auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
        const double* s = src + nc * H * W;
        double* d = out.data() + nc * H * W;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                double acc = 0.0;
                for (int dh = -1; dh <= 1; ++dh)
                    for (int dw = -1; dw <= 1; ++dw)
                        acc += s[cl(h + dh, H - 1) * W + cl(w + dw, W - 1)];
                d[h * W + w] = acc / 9.0;
            }
    });
    return custom_op("box_filter3", a.shape(), std::move(out), {a}, [N, C, H, W, cl](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double* g = n.grad.data();
        parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
            const double* s = g + nc * H * W;
            double* d = p.grad.data() + nc * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const double gv = s[h * W + w] / 9.0;
                    for (int dh = -1; dh <= 1; ++dh)
                        for (int dw = -1; dw <= 1; ++dw)
                            d[cl(h + dh, H - 1) * W + cl(w + dw, W - 1)] += gv;
                }
        });
    });
}

}  // namespace rmtl
