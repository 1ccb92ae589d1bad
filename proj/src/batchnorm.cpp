#include <cmath>

#include "robustmtl/parallel.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

namespace {
using detail::Node;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum, double eps) {
    if (x.ndim() != 4) throw DimensionError("batch_norm: expected NCHW");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        throw DimensionError("batch_norm: gamma/beta must have shape [C]");
    if (state.running_mean.size() != static_cast<size_t>(C)) state.init(C);

    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t m = static_cast<std::int64_t>(N) * plane;
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();

    std::vector<double> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (training) {
        parallel_for(C, [&](std::int64_t c) {
            double s = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = px + (static_cast<std::int64_t>(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = px + (static_cast<std::int64_t>(n) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            mean[static_cast<size_t>(c)] = mu;
            var[static_cast<size_t>(c)] = v / static_cast<double>(m);
        });
        for (int c = 0; c < C; ++c) {
            state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean[c];
            state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * var[c];
        }
        state.batches_seen++;
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> invstd(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);

    std::vector<double> out(static_cast<size_t>(x.numel()));
    parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
        const int c = static_cast<int>(nc % C);
        const double* p = px + nc * plane;
        double* o = out.data() + nc * plane;
        const double mu = mean[c], is = invstd[c], ga = pg[c], be = pb[c];
        for (std::int64_t i = 0; i < plane; ++i) o[i] = ga * (p[i] - mu) * is + be;
    });

    return custom_op(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [N, C, plane, m, mean, invstd, training](Node& node) {
            Node& nx = *node.parents[0];
            Node& ng = *node.parents[1];
            Node& nb = *node.parents[2];
            const double* px = nx.data.data();
            const double* pg = ng.data.data();
            const double* go = node.grad.data();

            // per-channel reductions, one channel per task
            std::vector<double> sum_g(static_cast<size_t>(C)), sum_gx(static_cast<size_t>(C));
            parallel_for(C, [&](std::int64_t c) {
                double sg = 0.0, sgx = 0.0;
                const double mu = mean[static_cast<size_t>(c)];
                const double is = invstd[static_cast<size_t>(c)];
                for (int n = 0; n < N; ++n) {
                    const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * plane;
                    const double* g = go + base;
                    const double* p = px + base;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sg += g[i];
                        sgx += g[i] * (p[i] - mu) * is;
                    }
                }
                sum_g[static_cast<size_t>(c)] = sg;
                sum_gx[static_cast<size_t>(c)] = sgx;
            });

            if (ng.requires_grad)
                for (int c = 0; c < C; ++c) ng.grad[c] += sum_gx[c];
            if (nb.requires_grad)
                for (int c = 0; c < C; ++c) nb.grad[c] += sum_g[c];

            if (nx.requires_grad) {
                parallel_for(static_cast<std::int64_t>(N) * C, [&](std::int64_t nc) {
                    const int c = static_cast<int>(nc % C);
                    const double mu = mean[c], is = invstd[c], ga = pg[c];
                    const double* g = go + nc * plane;
                    const double* p = px + nc * plane;
                    double* d = nx.grad.data() + nc * plane;
                    if (training) {
                        const double mg = sum_g[c] / static_cast<double>(m);
                        const double mgx = sum_gx[c] / static_cast<double>(m);
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const double xhat = (p[i] - mu) * is;
                            d[i] += ga * is * (g[i] - mg - xhat * mgx);
                        }
                    } else {
                        for (std::int64_t i = 0; i < plane; ++i) d[i] += ga * is * g[i];
                    }
                });
            }
        });
}

}  // namespace rmtl
