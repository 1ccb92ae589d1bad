#include "robustmtl/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "robustmtl/parallel.hpp"
#include "robustmtl/rng.hpp"

namespace rmtl {

PerturbFamily perturb_family_from_string(const std::string& s) {
    if (s == "gaussian") return PerturbFamily::kGaussian;
    if (s == "salt_pepper") return PerturbFamily::kSaltPepper;
    if (s == "fgsm") return PerturbFamily::kFgsm;
    if (s == "pgd") return PerturbFamily::kPgd;
    throw ConfigError("unknown perturbation family '" + s + "'");
}

std::string to_string(PerturbFamily f) {
    switch (f) {
        case PerturbFamily::kGaussian: return "gaussian";
        case PerturbFamily::kSaltPepper: return "salt_pepper";
        case PerturbFamily::kFgsm: return "fgsm";
        case PerturbFamily::kPgd: return "pgd";
    }
    return "?";
}

EpsilonReport measure_epsilon(const Tensor& x, const Tensor& x_adv) {
    if (x.shape() != x_adv.shape()) throw DimensionError("measure_epsilon: shape mismatch");
    const std::int64_t n = x.numel();
    std::vector<double> r2(static_cast<size_t>(n)), x2(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = x_adv.data()[static_cast<size_t>(i)] - x.data()[static_cast<size_t>(i)];
        r2[static_cast<size_t>(i)] = d * d;
        const double v = x.data()[static_cast<size_t>(i)];
        x2[static_cast<size_t>(i)] = v * v;
    }
    const double sum_r2 = deterministic_sum(r2.data(), n);
    const double sum_x2 = deterministic_sum(x2.data(), n);
    EpsilonReport rep;
    rep.eps_hat = std::sqrt(sum_r2 / static_cast<double>(n));
    rep.snr = sum_r2 == 0.0 ? std::numeric_limits<double>::infinity() : sum_x2 / sum_r2;
    return rep;
}

namespace {

PerturbedImage finish(const Tensor& x, std::vector<double> noise, bool clip) {
    const std::int64_t n = x.numel();
    std::vector<double> adv(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        adv[static_cast<size_t>(i)] = x.data()[static_cast<size_t>(i)] + noise[static_cast<size_t>(i)];
    if (clip) {
        for (std::int64_t i = 0; i < n; ++i) {
            adv[static_cast<size_t>(i)] = std::clamp(adv[static_cast<size_t>(i)], 0.0, 255.0);
            noise[static_cast<size_t>(i)] =
                adv[static_cast<size_t>(i)] - x.data()[static_cast<size_t>(i)];
        }
    }
    PerturbedImage out;
    out.x_adv = Tensor::from_data(x.shape(), std::move(adv));
    out.r = Tensor::from_data(x.shape(), std::move(noise));
    const EpsilonReport rep = measure_epsilon(x, out.x_adv);
    out.eps_hat = rep.eps_hat;
    out.snr = rep.snr;
    return out;
}

// input gradient of the weighted cross-entropy in gray-value units
std::vector<double> input_gradient(const Tensor& x, MultiTaskModel& model, const Tensor& onehot,
                                   const ClassWeights& weights) {
    const bool was_training = model.is_training();
    model.set_training(false);
    Tensor leaf = x.detach();
    leaf.set_requires_grad(true);
    Tensor probs = model.forward_seg(normalize_input(leaf));
    Tensor loss = weighted_cross_entropy(probs, onehot, weights);
    backward(loss);
    model.set_training(was_training);
    return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

PerturbedImage gaussian_noise(const Tensor& x, double eps, std::uint64_t seed) {
    if (eps < 0) throw ConfigError("gaussian: eps must be >= 0");
    Rng rng(mix_seed(seed, 0x6a55));
    std::vector<double> noise(static_cast<size_t>(x.numel()));
    for (auto& v : noise) v = eps * rng.normal();
    return finish(x, std::move(noise), false);
}

PerturbedImage salt_pepper(const Tensor& x, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw ConfigError("salt_pepper: fraction must be in [0,1]");
    if (x.ndim() != 4) throw DimensionError("salt_pepper: expected {1,C,H,W}");
    const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t pixels = static_cast<std::int64_t>(H) * W;
    const std::int64_t count = std::llround(fraction * static_cast<double>(pixels));

    Rng rng(mix_seed(seed, 0x5a17));
    std::vector<std::int64_t> order(static_cast<size_t>(pixels));
    for (std::int64_t i = 0; i < pixels; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);

    std::vector<double> noise(static_cast<size_t>(x.numel()), 0.0);
    for (std::int64_t k = 0; k < count; ++k) {
        const std::int64_t pix = order[static_cast<size_t>(k)];
        const double value = rng.uniform() < 0.5 ? 0.0 : 255.0;
        for (int c = 0; c < C; ++c) {
            const std::int64_t i = static_cast<std::int64_t>(c) * pixels + pix;
            noise[static_cast<size_t>(i)] = value - x.data()[static_cast<size_t>(i)];
        }
    }
    return finish(x, std::move(noise), false);
}

PerturbedImage fgsm(const Tensor& x, double eps, MultiTaskModel& model, const Tensor& onehot,
                    const ClassWeights& weights, bool clip) {
    if (eps < 0) throw ConfigError("fgsm: eps must be >= 0");
    if (!onehot.defined()) throw ContractError("fgsm: labels are required");
    const std::vector<double> g = input_gradient(x, model, onehot, weights);
    std::vector<double> noise(g.size());
    for (size_t i = 0; i < g.size(); ++i) noise[i] = eps * sign_of(g[i]);
    return finish(x, std::move(noise), clip);
}

PerturbedImage pgd(const Tensor& x, double eps, MultiTaskModel& model, const Tensor& onehot,
                   const ClassWeights& weights, int iters, double step, bool clip) {
    if (eps < 0) throw ConfigError("pgd: eps must be >= 0");
    if (iters < 1) throw ConfigError("pgd: iters must be >= 1");
    if (step <= 0.0) throw ConfigError("pgd: step must be > 0");
    if (!onehot.defined()) throw ContractError("pgd: labels are required");

    const std::int64_t n = x.numel();
    std::vector<double> r(static_cast<size_t>(n), 0.0);
    Tensor cur = x.detach();
    for (int it = 0; it < iters; ++it) {
        const std::vector<double> g = input_gradient(cur, model, onehot, weights);
        auto cd = cur.data();
        for (std::int64_t i = 0; i < n; ++i) {
            const double proposed =
                r[static_cast<size_t>(i)] + step * sign_of(g[static_cast<size_t>(i)]);
            r[static_cast<size_t>(i)] = std::clamp(proposed, -eps, eps);
            cd[static_cast<size_t>(i)] =
                x.data()[static_cast<size_t>(i)] + r[static_cast<size_t>(i)];
        }
        if (clip)
            for (std::int64_t i = 0; i < n; ++i)
                cd[static_cast<size_t>(i)] = std::clamp(cd[static_cast<size_t>(i)], 0.0, 255.0);
    }
    return finish(x, std::move(r), clip);
}

PerturbedImage apply_perturbation(const PerturbationSpec& spec, const Tensor& x,
                                  MultiTaskModel* model, const Tensor* onehot,
                                  const ClassWeights* weights) {
    switch (spec.family) {
        case PerturbFamily::kGaussian:
            return gaussian_noise(x, spec.epsilon, spec.seed);
        case PerturbFamily::kSaltPepper:
            return salt_pepper(x, spec.fraction, spec.seed);
        case PerturbFamily::kFgsm:
        case PerturbFamily::kPgd: {
            if (!model || !onehot || !weights)
                throw ContractError("adversarial perturbations need a model, labels and weights");
            if (spec.family == PerturbFamily::kFgsm)
                return fgsm(x, spec.epsilon, *model, *onehot, *weights, spec.clip);
            return pgd(x, spec.epsilon, *model, *onehot, *weights, spec.pgd_iters,
                       spec.pgd_step_frac * spec.epsilon, spec.clip);
        }
    }
    throw ConfigError("unhandled perturbation family");
}

}  // namespace rmtl
