#pragma once

#include <cstdint>
#include <vector>

#include "robustmtl/tensor.hpp"

namespace rmtl {

inline constexpr double kSsimAlpha = 0.85;
inline constexpr double kSmoothnessBeta = 1e-3;
inline constexpr double kLogClamp = 1e-7;

struct ClassWeights {
    std::vector<double> w;
};

// w_s = 1 / ln(c + p_s) with c = 1.02 and p_s the class frequency.
ClassWeights class_weights(const std::vector<std::int64_t>& histogram);

// One-hot encoding of a label map (constant tensor {1,S,H,W}); pixels with
// label 255 ("ignore") get an all-zero row and contribute no loss.
Tensor one_hot(const std::vector<std::uint8_t>& labels, int h, int w, int classes);

// J_ce = -1/|I| sum_i sum_s w_s * ybar_{i,s} * log(y_{i,s}), log clamped at
// log(1e-7). probs and onehot are {N,S,H,W}.
Tensor weighted_cross_entropy(const Tensor& probs, const Tensor& onehot, const ClassWeights& w);

// Per-pixel SSIM on 3x3 box-filtered statistics, C1=0.01^2, C2=0.03^2 on
// the [0,1] scale, clipped to [0,1] and averaged over channels -> {N,H,W}.
Tensor ssim_index(const Tensor& a, const Tensor& b);

// Per-pixel minimum over the warped candidates of
// alpha/2*(1-SSIM) + (1-alpha)*mean_c|x - w|, averaged over pixels.
// Inputs are [0,1] images {N,C,H,W}.
Tensor photometric_loss(const Tensor& target, const std::vector<Tensor>& warped);

// Edge-aware smoothness of the mean-normalized disparity: forward
// differences, each axis averaged over its valid positions.
Tensor smoothness_loss(const Tensor& disparity, const Tensor& image);

Tensor depth_loss(const Tensor& photometric, const Tensor& smoothness,
                  double beta = kSmoothnessBeta);
double depth_loss(double photometric, double smoothness, double beta = kSmoothnessBeta);

struct ScaleLosses {
    double j_ph = 0, j_sm = 0;
};

struct LossReport {
    double j_ce = 0, j_ph = 0, j_sm = 0, j_depth = 0;
    std::vector<ScaleLosses> per_scale;
};

}  // namespace rmtl
