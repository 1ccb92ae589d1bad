#include "robustmtl/losses.hpp"

#include <cmath>

namespace rmtl {

ClassWeights class_weights(const std::vector<std::int64_t>& histogram) {
    std::int64_t total = 0;
    for (auto c : histogram) total += c;
    if (total <= 0) throw ContractError("class_weights: empty histogram");
    ClassWeights cw;
    cw.w.reserve(histogram.size());
    for (auto c : histogram) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        cw.w.push_back(1.0 / std::log(1.02 + p));
    }
    return cw;
}

Tensor one_hot(const std::vector<std::uint8_t>& labels, int h, int w, int classes) {
    if (static_cast<std::int64_t>(labels.size()) != static_cast<std::int64_t>(h) * w)
        throw DimensionError("one_hot: label count does not match image size");
    std::vector<double> out(static_cast<size_t>(classes) * h * w, 0.0);
    for (int i = 0; i < h * w; ++i) {
        const int c = labels[static_cast<size_t>(i)];
        if (c == 255) continue;  // ignore label
        if (c >= classes) throw ContractError("one_hot: label exceeds class count");
        out[static_cast<size_t>(c) * h * w + i] = 1.0;
    }
    return Tensor::from_data({1, classes, h, w}, std::move(out));
}

Tensor weighted_cross_entropy(const Tensor& probs, const Tensor& onehot, const ClassWeights& w) {
    if (probs.ndim() != 4 || onehot.shape() != probs.shape())
        throw DimensionError("weighted_cross_entropy: probs " + shape_str(probs.shape()) +
                             " vs labels " + shape_str(onehot.shape()));
    const int S = probs.dim(1);
    if (static_cast<int>(w.w.size()) != S)
        throw DimensionError("weighted_cross_entropy: weight count mismatch");
    const int N = probs.dim(0), H = probs.dim(2), W = probs.dim(3);

    // weights folded into the constant one-hot target
    std::vector<double> tgt(onehot.data().begin(), onehot.data().end());
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int s = 0; s < S; ++s) {
            double* p = tgt.data() + (static_cast<std::int64_t>(n) * S + s) * plane;
            for (std::int64_t i = 0; i < plane; ++i) p[i] *= w.w[static_cast<size_t>(s)];
        }
    Tensor weighted = Tensor::from_data(probs.shape(), std::move(tgt));
    Tensor logp = log(maximum(probs, Tensor::scalar(kLogClamp)));
    Tensor total = sum_all(mul(weighted, logp));
    const double inv_pixels = 1.0 / static_cast<double>(static_cast<std::int64_t>(N) * H * W);
    return neg(mul_scalar(total, inv_pixels));
}

Tensor ssim_index(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || a.shape() != b.shape())
        throw DimensionError("ssim_index: shape mismatch");
    constexpr double C1 = 0.01 * 0.01;
    constexpr double C2 = 0.03 * 0.03;
    Tensor mu_a = box_filter3(a);
    Tensor mu_b = box_filter3(b);
    Tensor var_a = sub(box_filter3(mul(a, a)), mul(mu_a, mu_a));
    Tensor var_b = sub(box_filter3(mul(b, b)), mul(mu_b, mu_b));
    Tensor cov = sub(box_filter3(mul(a, b)), mul(mu_a, mu_b));
    Tensor num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), C1),
                     add_scalar(mul_scalar(cov, 2.0), C2));
    Tensor den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), C1),
                     add_scalar(add(var_a, var_b), C2));
    Tensor s = div(num, den);
    s = minimum(maximum(s, Tensor::scalar(0.0)), Tensor::scalar(1.0));
    return mean_axis(s, 1);  // {N,H,W}
}

Tensor photometric_loss(const Tensor& target, const std::vector<Tensor>& warped) {
    if (warped.empty()) throw ContractError("photometric_loss: needs at least one warped frame");
    Tensor per_pixel;
    for (const Tensor& w : warped) {
        if (w.shape() != target.shape())
            throw DimensionError("photometric_loss: warped frame shape mismatch");
        Tensor ssim = ssim_index(target, w);                       // {N,H,W}
        Tensor l1 = mean_axis(abs(sub(target, w)), 1);             // {N,H,W}
        Tensor err = add(mul_scalar(add_scalar(neg(ssim), 1.0), 0.5 * kSsimAlpha),
                         mul_scalar(l1, 1.0 - kSsimAlpha));
        per_pixel = per_pixel.defined() ? minimum(per_pixel, err) : err;
    }
    return mean_all(per_pixel);
}

Tensor smoothness_loss(const Tensor& disparity, const Tensor& image) {
    if (disparity.ndim() != 4 || disparity.dim(1) != 1)
        throw DimensionError("smoothness_loss: disparity must be {N,1,H,W}");
    if (image.ndim() != 4 || image.dim(0) != disparity.dim(0) ||
        image.dim(2) != disparity.dim(2) || image.dim(3) != disparity.dim(3))
        throw DimensionError("smoothness_loss: image/disparity size mismatch");
    const int H = disparity.dim(2), W = disparity.dim(3);

    Tensor rho = div(disparity, mean_all(disparity));

    auto fwd_diff = [](const Tensor& t, int axis, int extent) {
        return sub(slice(t, axis, 1, extent - 1), slice(t, axis, 0, extent - 1));
    };
    Tensor dh_r = abs(fwd_diff(rho, 2, H));
    Tensor dw_r = abs(fwd_diff(rho, 3, W));
    Tensor dh_i = mean_axis(abs(fwd_diff(image, 2, H)), 1);  // {N,H-1,W}
    Tensor dw_i = mean_axis(abs(fwd_diff(image, 3, W)), 1);
    Tensor eh = exp(neg(reshape(dh_i, {image.dim(0), 1, H - 1, W})));
    Tensor ew = exp(neg(reshape(dw_i, {image.dim(0), 1, H, W - 1})));
    return add(mean_all(mul(dh_r, eh)), mean_all(mul(dw_r, ew)));
}

Tensor depth_loss(const Tensor& photometric, const Tensor& smoothness, double beta) {
    return add(photometric, mul_scalar(smoothness, beta));
}

double depth_loss(double photometric, double smoothness, double beta) {
    return photometric + beta * smoothness;
}

}  // namespace rmtl
