#include <doctest.h>

#include <cmath>
#include <sstream>

#include "robustmtl/geometry.hpp"
#include "robustmtl/gradcheck.hpp"
#include "robustmtl/reference.hpp"
#include "robustmtl/serialize.hpp"
#include "robustmtl/tensor.hpp"
#include "testutil.hpp"

using namespace rmtl;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("shape invariant: data length must match shape product") {
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), DimensionError);
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
}

TEST_CASE("conv2d: 1x1 kernel scales a 3x3 plane of ones") {
    Tensor in = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 1, 1}, 2.0);
    Tensor out = conv2d(in, k, {}, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 3, 3});
    for (double v : out.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d: full-window sum case") {
    Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor out = conv2d(in, k, {}, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.item() == doctest::Approx(10.0));
}

TEST_CASE("conv2d matches the naive 6-loop oracle") {
    Rng rng(42);
    for (int pad = 0; pad <= 1; ++pad)
        for (int stride = 1; stride <= 2; ++stride) {
            Tensor in = random_tensor({2, 3, 8, 8}, rng);
            Tensor k = random_tensor({4, 3, 3, 3}, rng);
            Tensor b = random_tensor({4}, rng);
            Tensor out = conv2d(in, k, b, stride, pad);
            const int OH = (8 + 2 * pad - 3) / stride + 1;
            std::vector<double> expect(static_cast<size_t>(2 * 4 * OH * OH));
            ref::conv2d(in.data().data(), 2, 3, 8, 8, k.data().data(), 4, 3, 3,
                        b.data().data(), stride, pad, expect.data());
            CHECK(out.shape() == Shape{2, 4, OH, OH});
            CHECK(max_abs_diff(out.data(), expect) < 1e-12);
        }
}

TEST_CASE("conv2d rejects mismatched channel counts") {
    Tensor in = Tensor::zeros({1, 2, 4, 4});
    Tensor k = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(in, k, {}, 1, 0), DimensionError);
}

TEST_CASE("grid_sample: identity grid copies the source exactly") {
    Rng rng(7);
    Tensor src = random_tensor({2, 3, 5, 6}, rng);
    Tensor out = grid_sample(src, identity_grid(2, 5, 6));
    CHECK(max_abs_diff(out, src) == 0.0);
}

TEST_CASE("grid_sample: half-pixel shift on a ramp averages horizontal neighbors") {
    const int W = 8, H = 4;
    std::vector<double> ramp(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ramp[static_cast<size_t>(y) * W + x] = 3.0 * x + 1.0;
    Tensor src = Tensor::from_data({1, 1, H, W}, ramp);
    std::vector<double> g(static_cast<size_t>(H) * W * 2);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            g[(static_cast<size_t>(y) * W + x) * 2] = x + 0.5;
            g[(static_cast<size_t>(y) * W + x) * 2 + 1] = y;
        }
    Tensor out = grid_sample(src, Tensor::from_data({1, H, W, 2}, g));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W - 1; ++x) {
            const double expect = 0.5 * (ramp[static_cast<size_t>(y) * W + x] +
                                         ramp[static_cast<size_t>(y) * W + x + 1]);
            CHECK(out.at({0, 0, y, x}) == doctest::Approx(expect).epsilon(1e-12));
        }
        CHECK(out.at({0, 0, y, W - 1}) ==
              doctest::Approx(ramp[static_cast<size_t>(y) * W + W - 1]));
    }
}

TEST_CASE("grid_sample matches the 4-corner bilinear oracle on random grids") {
    Rng rng(99);
    Tensor src = random_tensor({2, 3, 7, 9}, rng);
    std::vector<double> g(2 * 6 * 5 * 2);
    for (size_t i = 0; i < g.size(); i += 2) {
        g[i] = rng.uniform(0.0, 8.0);
        g[i + 1] = rng.uniform(0.0, 6.0);
    }
    Tensor grid = Tensor::from_data({2, 6, 5, 2}, g);
    Tensor out = grid_sample(src, grid);
    std::vector<double> expect(static_cast<size_t>(2 * 3 * 6 * 5));
    ref::bilinear_sample(src.data().data(), 2, 3, 7, 9, grid.data().data(), 6, 5, expect.data());
    CHECK(max_abs_diff(out.data(), expect) < 1e-12);
}

TEST_CASE("softmax: equal logits give uniform probabilities") {
    Tensor logits = Tensor::full({1, 4, 2, 2}, 0.7);
    Tensor p = softmax(logits, 1);
    for (double v : p.data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("softmax outputs sum to one along the class axis") {
    Rng rng(3);
    for (int it = 0; it < 50; ++it) {
        Tensor logits = random_tensor({2, 5, 3, 3}, rng, -30.0, 30.0);
        Tensor p = softmax(logits, 1);
        for (int n = 0; n < 2; ++n)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 3; ++w) {
                    double s = 0.0;
                    for (int c = 0; c < 5; ++c) s += p.at({n, c, h, w});
                    CHECK(std::fabs(s - 1.0) < 1e-6);
                }
    }
}

TEST_CASE("minimum ties route the gradient to the first argument") {
    Tensor a = Tensor::full({3}, 2.0, true);
    Tensor b = Tensor::full({3}, 2.0, true);
    Tensor loss = sum_all(minimum(a, b));
    backward(loss);
    for (double v : a.grad()) CHECK(v == 1.0);
    for (double v : b.grad()) CHECK(v == 0.0);
    // forward value is the tied value itself
    Tensor m = minimum(a, b);
    for (double v : m.data()) CHECK(v == 2.0);
}

TEST_CASE("batch_norm eval mode reproduces the running-statistics distribution") {
    Rng rng(11);
    BatchNormState state;
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    const double means[3] = {3.0, -1.0, 0.5};
    const double stds[3] = {2.0, 0.5, 1.5};
    auto draw = [&]() {
        std::vector<double> d(static_cast<size_t>(4 * 3 * 8 * 8));
        for (int n = 0; n < 4; ++n)
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < 64; ++i)
                    d[(static_cast<size_t>(n) * 3 + c) * 64 + i] = rng.normal(means[c], stds[c]);
        return Tensor::from_data({4, 3, 8, 8}, std::move(d));
    };
    for (int step = 0; step < 300; ++step) batch_norm(draw(), gamma, beta, state, true);
    Tensor out = batch_norm(draw(), gamma, beta, state, false);
    for (int c = 0; c < 3; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 64; ++i) {
                const double v = out.at({n, c, i / 8, i % 8});
                s += v;
                s2 += v * v;
            }
        const double m = s / 256.0;
        const double var = s2 / 256.0 - m * m;
        CHECK(std::fabs(m) < 0.2);
        CHECK(var == doctest::Approx(1.0).epsilon(0.25));
    }
}

TEST_CASE("batch_norm training mode updates running statistics every pass") {
    BatchNormState state;
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Rng rng(5);
    Tensor x = random_tensor({2, 2, 4, 4}, rng);
    batch_norm(x, gamma, beta, state, true);
    const auto rm1 = state.running_mean;
    batch_norm(x, gamma, beta, state, true);
    CHECK(state.batches_seen == 2);
    CHECK(state.running_mean != rm1);
    // eval mode leaves them untouched
    const auto rm2 = state.running_mean;
    batch_norm(x, gamma, beta, state, false);
    CHECK(state.running_mean == rm2);
}

TEST_CASE("backward: sum gives all-ones gradient") {
    Rng rng(1);
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    backward(sum_all(x));
    for (double v : x.grad()) CHECK(v == 1.0);
}

TEST_CASE("backward: d/dx of sum(x*x)/2 is x") {
    Rng rng(2);
    Tensor x = random_tensor({5, 5}, rng);
    x.set_requires_grad(true);
    backward(mul_scalar(sum_all(mul(x, x)), 0.5));
    CHECK(bit_equal(x.grad(), x.data()));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("backward is deterministic: repeated runs give bit-identical gradients") {
    Rng rng(21);
    Tensor x = random_tensor({4, 6, 10, 12}, rng);
    x.set_requires_grad(true);
    Tensor k = random_tensor({3, 6, 3, 3}, rng);
    k.set_requires_grad(true);
    Tensor weights = random_tensor({4, 3, 10, 12}, rng);
    Tensor loss = mean_all(mul(sigmoid(conv2d(x, k, {}, 1, 1)), weights));
    Tape tape = Tape::record(loss);
    tape.backward();
    std::vector<double> gx(x.grad().begin(), x.grad().end());
    std::vector<double> gk(k.grad().begin(), k.grad().end());
    tape.backward();
    CHECK(bit_equal(x.grad(), gx));
    CHECK(bit_equal(k.grad(), gk));
}

TEST_CASE("tape is topologically ordered and inputs precede their consumers") {
    Rng rng(31);
    Tensor x = random_tensor({3, 3}, rng);
    x.set_requires_grad(true);
    Tensor y = mul(add(x, x), sigmoid(x));
    Tensor loss = sum_all(add(y, mul(y, y)));
    Tape tape = Tape::record(loss);
    CHECK(tape.size() > 4);
    CHECK(tape.topologically_ordered());
}

TEST_CASE("gradients accumulate across shared sub-expressions") {
    Tensor x = Tensor::from_data({1}, {3.0}, true);
    Tensor y = mul(x, x);          // x^2
    Tensor loss = add(y, mul(y, x));  // x^2 + x^3 -> d/dx = 2x + 3x^2 = 33
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(33.0));
}

TEST_CASE("grad_check: composite graphs match finite differences") {
    Rng rng(55);
    auto builders = std::vector<std::function<Tensor(const Tensor&)>>{
        [](const Tensor& t) { return sum_all(mul(t, t)); },
        [](const Tensor& t) { return mean_all(sigmoid(mul_scalar(t, 2.0))); },
        [](const Tensor& t) { return sum_all(exp(mul_scalar(abs(t), 0.5))); },
        [](const Tensor& t) { return mean_all(mul(elu(t), relu(add_scalar(t, 0.3)))); },
        [](const Tensor& t) { return sum_all(log(add_scalar(mul(t, t), 1.0))); },
        [](const Tensor& t) { return mean_all(softmax(t, 1)) + sum_all(mean_axis(t, 0)); },
    };
    for (auto& b : builders) {
        Tensor x = random_tensor({2, 3, 4}, rng, 0.1, 1.0);
        auto res = grad_check(b, x, 1e-4);
        CHECK(res.pass);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("grad_check flags an intentionally wrong backward rule") {
    Rng rng(66);
    Tensor x = random_tensor({4, 4}, rng, 0.5, 1.5);
    auto bad = [](const Tensor& t) {
        std::vector<double> out(t.data().begin(), t.data().end());
        for (auto& v : out) v = v * v;
        Tensor sq = custom_op("bad_square", t.shape(), std::move(out), {t},
                              [](detail::Node& n) {
                                  // wrong: should be 2*x*g
                                  for (size_t i = 0; i < n.grad.size(); ++i)
                                      n.parents[0]->grad[i] += 3.0 * n.grad[i];
                              });
        return sum_all(sq);
    };
    auto res = grad_check(bad, x, 1e-4);
    CHECK_FALSE(res.pass);
}

TEST_CASE("elementwise ops broadcast single-element tensors") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor s = Tensor::scalar(10.0);
    Tensor out = mul(a, s);
    CHECK(out.at({1, 1}) == 40.0);
    Tensor out2 = div(s, a);
    CHECK(out2.at({0, 1}) == 5.0);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("scalar broadcast gradients reduce over the broadcast side") {
    Tensor a = Tensor::from_data({3}, {1, 2, 3});
    Tensor s = Tensor::scalar(2.0, true);
    backward(sum_all(mul(a, s)));
    CHECK(s.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("concat and slice are inverse and differentiable") {
    Rng rng(77);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 2, 4}, rng);
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 5, 4});
    CHECK(max_abs_diff(slice(c, 1, 0, 3), a) == 0.0);
    CHECK(max_abs_diff(slice(c, 1, 3, 2), b) == 0.0);

    auto res = grad_check(
        [](const Tensor& t) {
            Tensor left = slice(t, 1, 0, 2);
            Tensor right = slice(t, 1, 1, 2);
            return sum_all(mul(concat({left, right}, 1), concat({right, left}, 1)));
        },
        random_tensor({2, 3, 2}, rng), 1e-5);
    CHECK(res.pass);
}

TEST_CASE("hflip reverses the last axis and undoes itself") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor f = hflip(a);
    CHECK(f.at({0, 0}) == 3.0);
    CHECK(f.at({1, 2}) == 4.0);
    CHECK(max_abs_diff(hflip(f), a) == 0.0);
}

TEST_CASE("upsample_nearest2 repeats pixels; avg_pool2 averages them back") {
    Tensor a = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor up = upsample_nearest2(a);
    CHECK(up.shape() == Shape{1, 1, 4, 4});
    CHECK(up.at({0, 0, 0, 1}) == 1.0);
    CHECK(up.at({0, 0, 3, 3}) == 4.0);
    CHECK(max_abs_diff(avg_pool2(up), a) == 0.0);
}

TEST_CASE("reductions against plain serial sums") {
    Rng rng(13);
    Tensor a = random_tensor({3, 1000, 7}, rng);
    const double total = ref::sum(a.data().data(), a.numel());
    CHECK(sum_all(a).item() == doctest::Approx(total).epsilon(1e-12));
    CHECK(mean_all(a).item() == doctest::Approx(total / a.numel()).epsilon(1e-12));
    Tensor per_axis = sum_axis(a, 1);
    CHECK(per_axis.shape() == Shape{3, 7});
    double acc = 0.0;
    for (int j = 0; j < 1000; ++j) acc += a.at({1, j, 3});
    CHECK(per_axis.at({1, 3}) == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("grad_scale is identity forward and scales gradients backward") {
    Rng rng(17);
    Tensor x = random_tensor({4, 4}, rng);
    x.set_requires_grad(true);
    Tensor y = grad_scale(x, 0.25);
    CHECK(bit_equal(y.data(), x.data()));
    backward(sum_all(y));
    for (double v : x.grad()) CHECK(v == 0.25);
}

TEST_CASE("TNSR records round-trip float32 data bit-exactly") {
    Rng rng(19);
    std::vector<double> d(24);
    for (auto& v : d) v = static_cast<double>(static_cast<float>(rng.uniform(-5, 5)));
    Tensor t = Tensor::from_data({2, 3, 4}, d);
    std::stringstream ss;
    write_tnsr(ss, t);
    Tensor back = read_tnsr(ss);
    CHECK(back.shape() == t.shape());
    CHECK(bit_equal(back.data(), t.data()));
}

TEST_CASE("malformed TNSR headers raise parse errors with offset info") {
    std::stringstream ss("TNXR 2 2 2\n");
    CHECK_THROWS_AS(read_tnsr(ss, "buffer"), IoError);
}
