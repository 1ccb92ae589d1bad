#include <doctest.h>

#include <cmath>

#include "robustmtl/gradcheck.hpp"
#include "robustmtl/losses.hpp"
#include "robustmtl/rng.hpp"
#include "testutil.hpp"

using namespace rmtl;
using testutil::random_tensor;

TEST_CASE("class_weights follows 1/ln(1.02 + p)") {
    auto two_equal = class_weights({50, 50});
    CHECK(two_equal.w[0] == doctest::Approx(1.0 / std::log(1.52)).epsilon(1e-12));
    CHECK(two_equal.w[1] == doctest::Approx(1.0 / std::log(1.52)).epsilon(1e-12));

    auto single = class_weights({123});
    CHECK(single.w[0] == doctest::Approx(1.0 / std::log(2.02)).epsilon(1e-12));

    auto uniform = class_weights({10, 10, 10, 10, 10});
    for (double w : uniform.w) CHECK(w == doctest::Approx(uniform.w[0]));

    auto with_empty = class_weights({100, 0});
    CHECK(with_empty.w[1] == doctest::Approx(1.0 / std::log(1.02)).epsilon(1e-12));

    CHECK_THROWS_AS(class_weights({0, 0}), ContractError);
}

TEST_CASE("weighted_cross_entropy: perfect one-hot prediction is ~0") {
    std::vector<std::uint8_t> labels{0, 1, 2, 3};
    Tensor onehot = one_hot(labels, 2, 2, 4);
    ClassWeights w{{1, 1, 1, 1}};
    Tensor loss = weighted_cross_entropy(onehot, onehot, w);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() <= 1e-6);
}

TEST_CASE("weighted_cross_entropy: uniform prediction over 4 classes is ln 4") {
    std::vector<std::uint8_t> labels{2, 0, 1, 3, 2, 0};
    Tensor onehot = one_hot(labels, 2, 3, 4);
    Tensor probs = Tensor::full({1, 4, 2, 3}, 0.25);
    ClassWeights w{{1, 1, 1, 1}};
    CHECK(weighted_cross_entropy(probs, onehot, w).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("weighted_cross_entropy: two-pixel hand-evaluated case") {
    // y = [(0.8,0.2),(0.3,0.7)], truth = (class 0, class 1), w = (1,2)
    Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.8, 0.3, 0.2, 0.7});
    Tensor onehot = one_hot({0, 1}, 1, 2, 2);
    ClassWeights w{{1.0, 2.0}};
    const double expect = -(std::log(0.8) + 2.0 * std::log(0.7)) / 2.0;
    CHECK(weighted_cross_entropy(probs, onehot, w).item() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.468).epsilon(1e-3));
}

TEST_CASE("weighted_cross_entropy is nonnegative and rejects shape mismatch") {
    Rng rng(8);
    ClassWeights w{{0.5, 2.0, 1.0}};
    for (int it = 0; it < 20; ++it) {
        Tensor logits = random_tensor({1, 3, 4, 4}, rng, -3, 3);
        Tensor probs = softmax(logits, 1);
        std::vector<std::uint8_t> labels(16);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
        CHECK(weighted_cross_entropy(probs, one_hot(labels, 4, 4, 3), w).item() >= 0.0);
    }
    CHECK_THROWS_AS(
        weighted_cross_entropy(Tensor::zeros({1, 3, 2, 2}), Tensor::zeros({1, 3, 2, 3}), w),
        DimensionError);
}

TEST_CASE("ignored pixels (label 255) contribute nothing to the loss") {
    Tensor probs = Tensor::from_data({1, 2, 1, 2}, {0.9, 0.1, 0.1, 0.9});
    ClassWeights w{{1, 1}};
    Tensor both = weighted_cross_entropy(probs, one_hot({0, 255}, 1, 2, 2), w);
    Tensor first_only = weighted_cross_entropy(probs, one_hot({0, 0}, 1, 2, 2), w);
    CHECK(both.item() < first_only.item());
    CHECK(both.item() == doctest::Approx(-std::log(0.9) / 2.0).epsilon(1e-12));
}

TEST_CASE("ssim_index: identical images give exactly one everywhere") {
    Rng rng(9);
    Tensor a = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    Tensor s = ssim_index(a, a);
    for (double v : s.data()) CHECK(v == 1.0);
}

TEST_CASE("ssim_index: constant images with offset, closed form") {
    const double c1 = 1e-4;
    Tensor a = Tensor::full({1, 1, 5, 5}, 0.5);
    Tensor b = Tensor::full({1, 1, 5, 5}, 0.6);
    const double expect = (2 * 0.5 * 0.6 + c1) / (0.5 * 0.5 + 0.6 * 0.6 + c1);
    Tensor s = ssim_index(a, b);
    for (double v : s.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.98361).epsilon(1e-4));
}

TEST_CASE("ssim_index: independent noise scores well below 0.5") {
    Rng rng(10);
    Tensor a = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    Tensor b = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    CHECK(mean_all(ssim_index(a, b)).item() < 0.5);
}

TEST_CASE("photometric_loss: perfect warps give zero") {
    Rng rng(12);
    Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    CHECK(photometric_loss(x, {x, x}).item() == 0.0);
}

TEST_CASE("photometric_loss: the per-pixel minimum selects the matching candidate") {
    Rng rng(14);
    Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor noise = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    CHECK(photometric_loss(x, {x, noise}).item() == 0.0);
    CHECK(photometric_loss(x, {noise, x}).item() == 0.0);
}

TEST_CASE("photometric_loss: constant offset, single candidate, closed form") {
    Tensor x = Tensor::full({1, 3, 5, 5}, 0.5);
    Tensor w = Tensor::full({1, 3, 5, 5}, 0.6);
    const double ssim = (2 * 0.5 * 0.6 + 1e-4) / (0.5 * 0.5 + 0.6 * 0.6 + 1e-4);
    const double expect = 0.5 * kSsimAlpha * (1.0 - ssim) + (1.0 - kSsimAlpha) * 0.1;
    CHECK(photometric_loss(x, {w}).item() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(expect == doctest::Approx(0.02197).epsilon(1e-3));
}

TEST_CASE("photometric_loss is invariant under swapping the candidates") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor w1 = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor w2 = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    CHECK(photometric_loss(x, {w1, w2}).item() == photometric_loss(x, {w2, w1}).item());
}

TEST_CASE("photometric_loss never exceeds the best single candidate") {
    Rng rng(16);
    for (int it = 0; it < 10; ++it) {
        Tensor x = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
        Tensor w1 = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
        Tensor w2 = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
        const double both = photometric_loss(x, {w1, w2}).item();
        CHECK(both <= photometric_loss(x, {w1}).item() + 1e-15);
        CHECK(both <= photometric_loss(x, {w2}).item() + 1e-15);
    }
}

TEST_CASE("photometric_loss rejects an empty candidate list") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    CHECK_THROWS_AS(photometric_loss(x, {}), ContractError);
}

TEST_CASE("smoothness_loss: constant disparity gives zero") {
    Rng rng(18);
    Tensor disp = Tensor::full({1, 1, 6, 6}, 3.7);
    Tensor img = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    CHECK(smoothness_loss(disp, img).item() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("smoothness_loss: linear ramp on a constant image, hand evaluation") {
    // disparity 1 + w on a 4x4 grid; mean = 2.5; normalized slope = 1/2.5
    std::vector<double> d(16);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) d[static_cast<size_t>(h * 4 + w)] = 1.0 + w;
    Tensor disp = Tensor::from_data({1, 1, 4, 4}, d);
    Tensor img = Tensor::full({1, 3, 4, 4}, 0.25);
    CHECK(smoothness_loss(disp, img).item() == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("smoothness_loss: strong image edges damp the penalty by e^-1") {
    std::vector<double> d(16);
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 4; ++w) d[static_cast<size_t>(h * 4 + w)] = 1.0 + w;
    Tensor disp = Tensor::from_data({1, 1, 4, 4}, d);
    // |d_w x| = 1 in every channel at every valid position, rows identical
    std::vector<double> img(3 * 16);
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) img[static_cast<size_t>(c * 16 + h * 4 + w)] = w % 2;
    Tensor x = Tensor::from_data({1, 3, 4, 4}, img);
    CHECK(smoothness_loss(disp, x).item() == doctest::Approx(0.4 * std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("smoothness_loss is invariant under positive rescaling of the disparity") {
    Rng rng(19);
    Tensor disp = random_tensor({1, 1, 8, 8}, rng, 0.5, 2.0);
    Tensor img = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    const double a = smoothness_loss(disp, img).item();
    const double b = smoothness_loss(mul_scalar(disp, 3.0), img).item();
    CHECK(std::fabs(a - b) < 1e-9);
}

TEST_CASE("depth_loss composition") {
    CHECK(depth_loss(0.0, 123.0, 0.0) == 0.0);
    CHECK(depth_loss(0.02197, 0.5) == doctest::Approx(0.022470).epsilon(1e-9));
    CHECK(depth_loss(1.0, 1.0) == doctest::Approx(1.001).epsilon(1e-12));
    Tensor t = depth_loss(Tensor::scalar(1.0), Tensor::scalar(1.0));
    CHECK(t.item() == doctest::Approx(1.001).epsilon(1e-12));
}

TEST_CASE("losses pass gradient checks") {
    Rng rng(20);

    auto res_ce = grad_check(
        [](const Tensor& logits) {
            Tensor probs = softmax(logits, 1);
            ClassWeights w{{1.0, 2.0, 0.5}};
            return weighted_cross_entropy(probs, one_hot({0, 2, 1, 1}, 2, 2, 3), w);
        },
        random_tensor({1, 3, 2, 2}, rng, -1, 1), 1e-4);
    CHECK(res_ce.pass);

    Tensor fixed_b = random_tensor({1, 2, 6, 6}, rng, 0.2, 0.8);
    auto res_ssim = grad_check(
        [&fixed_b](const Tensor& a) { return mean_all(ssim_index(a, fixed_b)); },
        random_tensor({1, 2, 6, 6}, rng, 0.2, 0.8), 1e-4);
    CHECK(res_ssim.pass);

    Tensor target = random_tensor({1, 3, 6, 6}, rng, 0.2, 0.8);
    Tensor other = random_tensor({1, 3, 6, 6}, rng, 0.2, 0.8);
    auto res_ph = grad_check(
        [&target, &other](const Tensor& w1) {
            return photometric_loss(target, {w1, other});
        },
        random_tensor({1, 3, 6, 6}, rng, 0.2, 0.8), 1e-4);
    CHECK(res_ph.pass);

    Tensor img = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    auto res_sm = grad_check(
        [&img](const Tensor& disp) { return smoothness_loss(disp, img); },
        random_tensor({1, 1, 6, 6}, rng, 0.5, 2.0), 1e-4);
    CHECK(res_sm.pass);
}
