// Compares the OpenMP operator kernels against the serial reference
// implementations: verifies agreement, then reports timings.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "robustmtl/parallel.hpp"
#include "robustmtl/reference.hpp"
#include "robustmtl/rng.hpp"
#include "robustmtl/tensor.hpp"

using namespace rmtl;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

Tensor rand_tensor(Shape s, Rng& rng) {
    std::vector<double> d(static_cast<size_t>(numel_of(s)));
    for (auto& v : d) v = rng.uniform(-1, 1);
    return Tensor::from_data(std::move(s), std::move(d));
}

double max_diff(std::span<const double> a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

struct Row {
    std::string name;
    double parallel_ms, reference_ms, diff;
};

}  // namespace

int main(int argc, char** argv) {
    int threads = 0;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--threads" && i + 1 < argc) threads = std::atoi(argv[++i]);
    }
    if (threads > 0) set_num_threads(threads);
    std::printf("kernel benchmark, %d thread(s), best of 5\n\n", num_threads());

    Rng rng(1234);
    std::vector<Row> rows;

    {
        const int N = 4, Ci = 32, H = 48, W = 64, Co = 32, K = 3;
        Tensor in = rand_tensor({N, Ci, H, W}, rng);
        Tensor k = rand_tensor({Co, Ci, K, K}, rng);
        Tensor b = rand_tensor({Co}, rng);
        Tensor out;
        const double tp = time_best_of(5, [&] { out = conv2d(in, k, b, 1, 1); });
        std::vector<double> expect(static_cast<size_t>(out.numel()));
        const double tr = time_best_of(5, [&] {
            ref::conv2d(in.data().data(), N, Ci, H, W, k.data().data(), Co, K, K,
                        b.data().data(), 1, 1, expect.data());
        });
        rows.push_back({"conv2d 4x32x48x64 k3", tp, tr, max_diff(out.data(), expect)});
    }

    {
        const int N = 4, C = 3, H = 96, W = 128;
        Tensor src = rand_tensor({N, C, H, W}, rng);
        std::vector<double> g(static_cast<size_t>(N) * H * W * 2);
        for (size_t i = 0; i < g.size(); i += 2) {
            g[i] = rng.uniform(0, W - 1);
            g[i + 1] = rng.uniform(0, H - 1);
        }
        Tensor grid = Tensor::from_data({N, H, W, 2}, g);
        Tensor out;
        const double tp = time_best_of(5, [&] { out = grid_sample(src, grid); });
        std::vector<double> expect(static_cast<size_t>(out.numel()));
        const double tr = time_best_of(5, [&] {
            ref::bilinear_sample(src.data().data(), N, C, H, W, grid.data().data(), H, W,
                                 expect.data());
        });
        rows.push_back({"grid_sample 4x3x96x128", tp, tr, max_diff(out.data(), expect)});
    }

    {
        const int N = 4, C = 3, H = 96, W = 128;
        Tensor src = rand_tensor({N, C, H, W}, rng);
        Tensor out;
        const double tp = time_best_of(5, [&] { out = box_filter3(src); });
        std::vector<double> expect(static_cast<size_t>(out.numel()));
        const double tr = time_best_of(
            5, [&] { ref::box_filter3(src.data().data(), N, C, H, W, expect.data()); });
        rows.push_back({"box_filter3 4x3x96x128", tp, tr, max_diff(out.data(), expect)});
    }

    {
        Tensor x = rand_tensor({1 << 22}, rng);
        double sp = 0, sr = 0;
        const double tp = time_best_of(5, [&] { sp = sum_all(x).item(); });
        const double tr = time_best_of(5, [&] { sr = ref::sum(x.data().data(), x.numel()); });
        rows.push_back({"sum 4M", tp, tr, std::fabs(sp - sr)});
    }

    std::printf("%-24s %12s %12s %10s %12s\n", "kernel", "parallel ms", "serial ms", "speedup",
                "max |diff|");
    bool ok = true;
    for (const auto& r : rows) {
        std::printf("%-24s %12.3f %12.3f %9.2fx %12.3g\n", r.name.c_str(), r.parallel_ms,
                    r.reference_ms, r.reference_ms / r.parallel_ms, r.diff);
        ok = ok && r.diff < 1e-9;
    }
    if (!ok) {
        std::fprintf(stderr, "error: kernel results diverge from the serial reference\n");
        return 1;
    }
    return 0;
}
