#include <doctest.h>

#include <cmath>
#include <set>

#include "robustmtl/perturb.hpp"
#include "robustmtl/synthdata.hpp"
#include "testutil.hpp"

using namespace rmtl;
using testutil::bit_equal;

namespace {

Tensor rendered_image(std::uint64_t seed = 31, int w = 128, int h = 96) {
    SceneSpec spec;
    spec.seed = seed;
    spec.width = w;
    spec.height = h;
    spec.frames = 1;
    return image_to_tensor(render_sequence(spec).frames[0].image);
}

struct AttackFixture {
    MultiTaskModel model;
    Tensor image;
    Tensor onehot;
    ClassWeights weights;

    AttackFixture()
        : model(
              [] {
                  NetworkConfig cfg;
                  cfg.encoder_widths = {8, 16};
                  cfg.scales = 2;
                  cfg.pose_width = 8;
                  return cfg;
              }(),
              123) {
        model.set_training(false);
        SceneSpec spec;
        spec.seed = 5;
        spec.width = 48;
        spec.height = 32;
        spec.frames = 1;
        auto seq = render_sequence(spec);
        image = image_to_tensor(seq.frames[0].image);
        onehot = one_hot(seq.frames[0].labels, 32, 48, 4);
        weights.w = {1.0, 1.0, 1.0, 1.0};
    }
};

}  // namespace

TEST_CASE("gaussian: eps 0 is the identity, same seed reproduces the noise") {
    Tensor x = rendered_image();
    PerturbedImage z = gaussian_noise(x, 0.0, 9);
    CHECK(bit_equal(z.x_adv.data(), x.data()));
    CHECK(z.eps_hat == 0.0);
    CHECK(std::isinf(z.snr));

    PerturbedImage a = gaussian_noise(x, 4.0, 9);
    PerturbedImage b = gaussian_noise(x, 4.0, 9);
    CHECK(bit_equal(a.r.data(), b.r.data()));
    PerturbedImage c = gaussian_noise(x, 4.0, 10);
    CHECK_FALSE(bit_equal(a.r.data(), c.r.data()));
}

TEST_CASE("gaussian: measured eps within 2% on a 128x96x3 image") {
    Tensor x = rendered_image();
    REQUIRE(x.numel() == 128 * 96 * 3);
    for (double eps : {1.0, 4.0, 16.0}) {
        PerturbedImage z = gaussian_noise(x, eps, 77);
        CHECK(std::fabs(z.eps_hat - eps) / eps < 0.02);
    }
}

TEST_CASE("gaussian: measured eps is monotone in the requested eps for a fixed seed") {
    Tensor x = rendered_image();
    double prev = -1.0;
    for (double eps : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
        PerturbedImage z = gaussian_noise(x, eps, 3);
        CHECK(z.eps_hat > prev);
        prev = z.eps_hat;
    }
}

TEST_CASE("salt_pepper: f=0 identity; full flip of a mid-gray image gives eps ~127.5") {
    Tensor x = rendered_image();
    PerturbedImage z = salt_pepper(x, 0.0, 4);
    CHECK(bit_equal(z.x_adv.data(), x.data()));
    CHECK(z.eps_hat == 0.0);

    Tensor gray = Tensor::full({1, 3, 96, 128}, 128.0);
    PerturbedImage full = salt_pepper(gray, 1.0, 4);
    // every pixel moves to 0 (|r|=128) or 255 (|r|=127)
    CHECK(std::fabs(full.eps_hat - 127.5) < 0.5);
    for (double v : full.x_adv.data()) CHECK((v == 0.0 || v == 255.0));
}

TEST_CASE("salt_pepper: exactly round(f*H*W) pixels change, whole pixels at a time") {
    // values away from the extremes so every selected pixel really differs
    Tensor x = Tensor::full({1, 3, 32, 48}, 100.0);
    for (double f : {0.01, 0.1, 0.33}) {
        PerturbedImage z = salt_pepper(x, f, 11);
        std::set<int> changed;
        for (int y = 0; y < 32; ++y)
            for (int w = 0; w < 48; ++w) {
                bool any = false, all = true;
                double v0 = z.x_adv.at({0, 0, y, w});
                for (int c = 0; c < 3; ++c) {
                    const bool diff = z.x_adv.at({0, c, y, w}) != 100.0;
                    any = any || diff;
                    all = all && diff;
                    CHECK(z.x_adv.at({0, c, y, w}) == (diff ? v0 : 100.0));
                }
                CHECK(any == all);  // whole-pixel flips
                if (any) changed.insert(y * 48 + w);
            }
        CHECK(static_cast<std::int64_t>(changed.size()) == std::llround(f * 32 * 48));
    }
}

TEST_CASE("salt_pepper: flipped set grows with f for a fixed seed") {
    Tensor x = Tensor::full({1, 3, 16, 16}, 100.0);
    PerturbedImage small = salt_pepper(x, 0.1, 6);
    PerturbedImage big = salt_pepper(x, 0.3, 6);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (small.r.data()[static_cast<size_t>(i)] != 0.0)
            CHECK(big.r.data()[static_cast<size_t>(i)] == small.r.data()[static_cast<size_t>(i)]);
    }
    CHECK(big.eps_hat > small.eps_hat);
}

TEST_CASE("fgsm: zero input gradient leaves the image untouched (sign(0)=0)") {
    AttackFixture fx;
    // zeroing the classifier head cuts every input-gradient path
    for (auto& p : fx.model.parameters())
        if (p.name == "seg_head.w" || p.name == "seg_head.b")
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    PerturbedImage z = fgsm(fx.image, 4.0, fx.model, fx.onehot, fx.weights);
    CHECK(bit_equal(z.x_adv.data(), fx.image.data()));
}

TEST_CASE("fgsm: every perturbation entry is -eps, 0 or +eps") {
    AttackFixture fx;
    const double eps = 4.0;
    PerturbedImage z = fgsm(fx.image, eps, fx.model, fx.onehot, fx.weights);
    int nonzero = 0;
    for (double v : z.r.data()) {
        CHECK((v == eps || v == -eps || v == 0.0));
        nonzero += v != 0.0;
    }
    CHECK(nonzero > 0);
}

TEST_CASE("fgsm: measured eps follows the exact zero-count identity") {
    AttackFixture fx;
    const double eps = 4.0;
    PerturbedImage z = fgsm(fx.image, eps, fx.model, fx.onehot, fx.weights);
    std::int64_t zeros = 0;
    for (double v : z.r.data()) zeros += v == 0.0;
    const double n = static_cast<double>(z.r.numel());
    // r has n - zeros entries of magnitude eps, so eps_hat is forced
    CHECK(std::fabs(z.eps_hat - eps * std::sqrt((n - static_cast<double>(zeros)) / n)) <= 1e-9);
    if (zeros == 0) CHECK(std::fabs(z.eps_hat - eps) <= 1e-9);
}

TEST_CASE("fgsm requires labels") {
    AttackFixture fx;
    CHECK_THROWS_AS(fgsm(fx.image, 1.0, fx.model, Tensor(), fx.weights), ContractError);
}

TEST_CASE("fgsm is invariant to positive rescaling of the loss") {
    AttackFixture fx;
    PerturbedImage a = fgsm(fx.image, 2.0, fx.model, fx.onehot, fx.weights);
    ClassWeights scaled;
    for (double w : fx.weights.w) scaled.w.push_back(10.0 * w);
    PerturbedImage b = fgsm(fx.image, 2.0, fx.model, fx.onehot, scaled);
    CHECK(bit_equal(a.x_adv.data(), b.x_adv.data()));
}

TEST_CASE("pgd: one step of size eps reduces exactly to fgsm") {
    AttackFixture fx;
    const double eps = 3.0;
    PerturbedImage f = fgsm(fx.image, eps, fx.model, fx.onehot, fx.weights);
    PerturbedImage p = pgd(fx.image, eps, fx.model, fx.onehot, fx.weights, 1, eps);
    CHECK(bit_equal(f.x_adv.data(), p.x_adv.data()));
}

TEST_CASE("pgd stays inside the L-inf ball and validates its config") {
    AttackFixture fx;
    const double eps = 4.0;
    PerturbedImage p = pgd(fx.image, eps, fx.model, fx.onehot, fx.weights, 10, eps / 4.0);
    double linf = 0.0;
    for (double v : p.r.data()) linf = std::max(linf, std::fabs(v));
    CHECK(linf <= eps + 1e-9);
    CHECK(p.eps_hat <= eps + 1e-9);
    CHECK_THROWS_AS(pgd(fx.image, eps, fx.model, fx.onehot, fx.weights, 0, 1.0), ConfigError);
    CHECK_THROWS_AS(pgd(fx.image, eps, fx.model, fx.onehot, fx.weights, 10, 0.0), ConfigError);
}

TEST_CASE("x + r reconstructs x_adv bit-exactly for every family") {
    AttackFixture fx;
    PerturbationSpec spec;
    spec.epsilon = 4.0;
    spec.fraction = 0.05;
    spec.seed = 8;
    for (PerturbFamily fam : {PerturbFamily::kGaussian, PerturbFamily::kSaltPepper,
                              PerturbFamily::kFgsm, PerturbFamily::kPgd}) {
        spec.family = fam;
        PerturbedImage z = apply_perturbation(spec, fx.image, &fx.model, &fx.onehot, &fx.weights);
        for (std::int64_t i = 0; i < fx.image.numel(); ++i)
            CHECK(fx.image.data()[static_cast<size_t>(i)] + z.r.data()[static_cast<size_t>(i)] ==
                  z.x_adv.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("measure_epsilon: constant offset and SNR agreement between families") {
    Tensor x = rendered_image(3, 48, 32);
    Tensor off = add_scalar(x, -2.5);
    EpsilonReport rep = measure_epsilon(x, off);
    CHECK(rep.eps_hat == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(measure_epsilon(x, x).snr == std::numeric_limits<double>::infinity());

    // gaussian and fgsm at the same eps have matching SNR within 2%
    AttackFixture fx;
    const double eps = 4.0;
    PerturbedImage g = gaussian_noise(fx.image, eps, 21);
    PerturbedImage f = fgsm(fx.image, eps, fx.model, fx.onehot, fx.weights);
    CHECK(std::fabs(g.snr - f.snr) / f.snr < 0.02);
}

TEST_CASE("clip option keeps gray values in range and repairs the identity") {
    AttackFixture fx;
    PerturbedImage z = fgsm(fx.image, 12.0, fx.model, fx.onehot, fx.weights, true);
    for (std::int64_t i = 0; i < z.x_adv.numel(); ++i) {
        const double v = z.x_adv.data()[static_cast<size_t>(i)];
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
        CHECK(fx.image.data()[static_cast<size_t>(i)] + z.r.data()[static_cast<size_t>(i)] == v);
    }
}
