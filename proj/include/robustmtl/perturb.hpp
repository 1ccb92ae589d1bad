#pragma once

#include <string>

#include "robustmtl/losses.hpp"
#include "robustmtl/network.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

enum class PerturbFamily { kGaussian, kSaltPepper, kFgsm, kPgd };

PerturbFamily perturb_family_from_string(const std::string& s);
std::string to_string(PerturbFamily f);

// Family + strength + RNG seed. epsilon is in gray-value units; the
// salt-and-pepper strength is the pixel fraction instead.
struct PerturbationSpec {
    PerturbFamily family = PerturbFamily::kGaussian;
    double epsilon = 0.0;
    double fraction = 0.0;  // salt_pepper only
    int pgd_iters = 10;
    double pgd_step_frac = 0.25;  // absolute step = frac * epsilon
    bool clip = false;            // optional [0,255] clipping for fgsm/pgd
    bool predicted_labels = false;  // attack the model's own prediction
    std::uint64_t seed = 0;

    double strength() const {
        return family == PerturbFamily::kSaltPepper ? fraction : epsilon;
    }
};

struct PerturbedImage {
    Tensor x_adv;  // {1,C,H,W}, real-valued gray units (no clipping by default)
    Tensor r;      // x_adv - x, bit-exact
    double eps_hat = 0.0;  // sqrt(mean r^2)
    double snr = 0.0;      // sum x^2 / sum r^2, +inf for r == 0
};

struct EpsilonReport {
    double eps_hat = 0.0;
    double snr = 0.0;
};

EpsilonReport measure_epsilon(const Tensor& x, const Tensor& x_adv);

// r ~ N(0, eps^2) i.i.d. per gray value; the same seed yields the same
// underlying standard normals for every eps.
PerturbedImage gaussian_noise(const Tensor& x, double eps, std::uint64_t seed);

// Sets round(fraction*H*W) whole pixels (all channels) to 0 or 255 with
// equal probability. For the same seed the flipped set grows with fraction.
PerturbedImage salt_pepper(const Tensor& x, double fraction, std::uint64_t seed);

// x + eps * sign(grad_x J_ce) with sign(0) = 0; the gradient is taken in
// gray-value units through the input normalization. Model runs in eval mode.
PerturbedImage fgsm(const Tensor& x, double eps, MultiTaskModel& model, const Tensor& onehot,
                    const ClassWeights& weights, bool clip = false);

// Iterated signed-gradient steps projected onto the L-inf ball of radius
// eps around x. step <= 0 raises a config error.
PerturbedImage pgd(const Tensor& x, double eps, MultiTaskModel& model, const Tensor& onehot,
                   const ClassWeights& weights, int iters, double step, bool clip = false);

// Dispatch on the spec; model/onehot/weights may be null for the random
// families.
PerturbedImage apply_perturbation(const PerturbationSpec& spec, const Tensor& x,
                                  MultiTaskModel* model, const Tensor* onehot,
                                  const ClassWeights* weights);

}  // namespace rmtl
