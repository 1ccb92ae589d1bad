#include "robustmtl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "robustmtl/rng.hpp"

namespace rmtl {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& build, const Tensor& x,
                           double tol, double step, int max_coords, std::uint64_t seed) {
    Tensor leaf = x.detach();
    leaf.set_requires_grad(true);

    Tensor loss = build(leaf);
    if (loss.numel() != 1) throw ContractError("grad_check: build must produce a scalar");
    backward(loss);
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

    std::vector<std::int64_t> coords;
    const std::int64_t n = leaf.numel();
    if (n <= max_coords) {
        for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
        Rng rng(seed);
        std::vector<std::int64_t> all(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        rng.shuffle(all);
        coords.assign(all.begin(), all.begin() + max_coords);
    }

    GradCheckResult res;
    res.checked = static_cast<int>(coords.size());
    double max_err = 0.0;
    auto data = leaf.data();
    for (std::int64_t c : coords) {
        const double orig = data[static_cast<size_t>(c)];
        data[static_cast<size_t>(c)] = orig + step;
        const double up = build(leaf).item();
        data[static_cast<size_t>(c)] = orig - step;
        const double dn = build(leaf).item();
        data[static_cast<size_t>(c)] = orig;
        const double numeric = (up - dn) / (2.0 * step);
        const double a = analytic[static_cast<size_t>(c)];
        const double scale = std::max({std::fabs(a), std::fabs(numeric), 1.0});
        max_err = std::max(max_err, std::fabs(a - numeric) / scale);
    }
    res.max_rel_error = max_err;
    res.pass = max_err < tol;
    return res;
}

}  // namespace rmtl
