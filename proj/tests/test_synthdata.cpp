#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "robustmtl/losses.hpp"
#include "robustmtl/synthdata.hpp"
#include "testutil.hpp"

using namespace rmtl;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    const std::string d = (fs::temp_directory_path() / ("rmtl_test_" + name)).string();
    fs::remove_all(d);
    return d;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Eq-style L1 residual: per pixel the channel-mean absolute difference,
// min over the candidate warps, averaged. Plain loops, no library calls.
double warp_residual(const Tensor& target01, const std::vector<Tensor>& warps,
                     const Tensor& valid) {
    const int C = target01.dim(1), H = target01.dim(2), W = target01.dim(3);
    double acc = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (valid.defined() && valid.at({0, 0, y, x}) == 0.0) continue;
            double best = 1e30;
            for (const Tensor& w : warps) {
                double l1 = 0.0;
                for (int c = 0; c < C; ++c)
                    l1 += std::fabs(target01.at({0, c, y, x}) - w.at({0, c, y, x}));
                best = std::min(best, l1 / C);
            }
            acc += best;
            count++;
        }
    return acc / static_cast<double>(count);
}

}  // namespace

TEST_CASE("render_sequence is deterministic and in-range") {
    SceneSpec spec;
    spec.seed = 42;
    Sequence a = render_sequence(spec);
    Sequence b = render_sequence(spec);
    REQUIRE(a.frames.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(a.frames[i].image.v == b.frames[i].image.v);
        CHECK(a.frames[i].labels == b.frames[i].labels);
        CHECK(a.frames[i].depth == b.frames[i].depth);
        for (float d : a.frames[i].depth) {
            CHECK(d >= kSceneDepthMin);
            CHECK(d <= kSceneDepthMax);
        }
        for (std::uint8_t l : a.frames[i].labels) CHECK(l < 4);
    }
}

TEST_CASE("a static camera renders identical triplet frames") {
    SceneSpec spec;
    spec.seed = 9;
    spec.motion_scale = 0.0;
    Sequence seq = render_sequence(spec);
    CHECK(seq.frames[0].image.v == seq.frames[1].image.v);
    CHECK(seq.frames[1].image.v == seq.frames[2].image.v);
    CHECK(seq.frames[0].depth == seq.frames[2].depth);
}

TEST_CASE("scenes expose all four classes somewhere in a small dataset") {
    bool seen[4] = {false, false, false, false};
    for (int s = 0; s < 6; ++s) {
        SceneSpec spec;
        spec.seed = 100 + static_cast<std::uint64_t>(s);
        Sequence seq = render_sequence(spec);
        for (std::uint8_t l : seq.frames[1].labels) seen[l] = true;
    }
    CHECK(seen[kGround]);
    CHECK(seen[kSky]);
    CHECK(seen[kBox]);
    CHECK(seen[kBall]);
}

TEST_CASE("ground-truth warp reproduces the center frame up to interpolation error") {
    double worst = 0.0;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
        SceneSpec spec;
        spec.seed = seed;
        Sequence seq = render_sequence(spec);
        const RenderedFrame& t = seq.frames[1];
        Tensor target01 = mul_scalar(image_to_tensor(t.image), 1.0 / 255.0);
        Tensor depth = Tensor::from_data({1, 1, spec.height, spec.width},
                                         std::vector<double>(t.depth.begin(), t.depth.end()));
        std::vector<Tensor> warps;
        Tensor valid;
        for (int other : {0, 2}) {
            Tensor grid = reproject_grid(depth, relative_transform(t, seq.frames[static_cast<size_t>(other)]),
                                         seq.intrinsics, &valid);
            Tensor src01 = mul_scalar(image_to_tensor(seq.frames[static_cast<size_t>(other)].image), 1.0 / 255.0);
            warps.push_back(grid_sample(src01, grid));
        }
        worst = std::max(worst, warp_residual(target01, warps, Tensor()));
    }
    CHECK(worst < 0.02);
}

TEST_CASE("wall pair: rendered flow matches the closed-form radial field") {
    SceneSpec spec;
    const double d = 12.0, dz = 1.5;
    Sequence seq = render_wall_pair(d, dz, spec);
    const Intrinsics& K = seq.intrinsics;
    Tensor f0 = mul_scalar(image_to_tensor(seq.frames[0].image), 1.0 / 255.0);
    Tensor f1 = mul_scalar(image_to_tensor(seq.frames[1].image), 1.0 / 255.0);

    // closed form: the point seen at (u,v) in frame 0 appears in frame 1 at
    // cx + (u-cx)*d/(d-dz) (and likewise for v)
    const double scale = d / (d - dz);
    std::vector<double> g(static_cast<size_t>(spec.height) * spec.width * 2);
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
            const size_t i = (static_cast<size_t>(y) * spec.width + x) * 2;
            g[i] = K.cx + (x - K.cx) * scale;
            g[i + 1] = K.cy + (y - K.cy) * scale;
        }
    Tensor warped = grid_sample(f1, Tensor::from_data({1, spec.height, spec.width, 2}, g));

    // compare away from the borders (edge pixels sample the clamped border)
    double acc = 0.0;
    int count = 0;
    for (int y = 4; y < spec.height - 4; ++y)
        for (int x = 4; x < spec.width - 4; ++x) {
            for (int c = 0; c < 3; ++c)
                acc += std::fabs(warped.at({0, c, y, x}) - f0.at({0, c, y, x}));
            count += 3;
        }
    CHECK(acc / count < 0.02);

    // depth maps of a fronto-parallel wall are constant
    for (float dv : seq.frames[0].depth) CHECK(dv == doctest::Approx(d).epsilon(1e-6));
    for (float dv : seq.frames[1].depth) CHECK(dv == doctest::Approx(d - dz).epsilon(1e-6));
}

TEST_CASE("label boundaries coincide with depth discontinuities except the horizon") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        SceneSpec spec;
        spec.seed = seed;
        Sequence seq = render_sequence(spec);
        const RenderedFrame& f = seq.frames[1];
        for (int y = 0; y < spec.height; y += 7) {
            for (int x = 0; x + 1 < spec.width; ++x) {
                const std::uint8_t la = f.labels[static_cast<size_t>(y) * spec.width + x];
                const std::uint8_t lb = f.labels[static_cast<size_t>(y) * spec.width + x + 1];
                if (la == lb) continue;
                if ((la == kGround && lb == kSky) || (la == kSky && lb == kGround)) continue;
                const double da = f.depth[static_cast<size_t>(y) * spec.width + x];
                const double db = f.depth[static_cast<size_t>(y) * spec.width + x + 1];
                CHECK(std::fabs(da - db) / std::min(da, db) > 0.05);
            }
        }
    }
}

TEST_CASE("generate_dataset: counting contracts, splits, and byte determinism") {
    const std::string d1 = tmp_dir("gen1"), d2 = tmp_dir("gen2");
    GenOptions opt;
    opt.seed = 7;
    opt.count = 10;
    opt.scene.width = 64;
    opt.scene.height = 48;
    DatasetIndex idx = generate_dataset(opt, d1);
    generate_dataset(opt, d2);

    CHECK(static_cast<int>(idx.records.size()) == 3 * opt.count);
    CHECK(static_cast<int>(idx.triplets("train").size()) == 7);   // floor(10*0.7)
    CHECK(static_cast<int>(idx.triplets("val").size()) == 1);     // floor(10*0.15)
    CHECK(static_cast<int>(idx.triplets("test").size()) == 2);    // remainder

    CHECK(slurp(d1 + "/index.csv") == slurp(d2 + "/index.csv"));
    CHECK(slurp(d1 + "/t0003/f1.ppm") == slurp(d2 + "/t0003/f1.ppm"));
    CHECK(slurp(d1 + "/t0003/f1.pgm") == slurp(d2 + "/t0003/f1.pgm"));
    CHECK(slurp(d1 + "/t0003/f1.dmap") == slurp(d2 + "/t0003/f1.dmap"));

    // training triplets have both neighbors
    for (int t : idx.triplets("train")) {
        CHECK(idx.frame(t, 1).has_prev);
        CHECK(idx.frame(t, 1).has_next);
    }

    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("dataset round trip: loaded tensors equal the rendered data") {
    const std::string d = tmp_dir("roundtrip");
    GenOptions opt;
    opt.seed = 3;
    opt.count = 2;
    opt.scene.width = 64;
    opt.scene.height = 48;
    generate_dataset(opt, d);
    DatasetIndex idx = load_dataset(d);
    REQUIRE(static_cast<int>(idx.records.size()) == 6);

    // regenerate the same scene and compare against the loaded files
    SceneSpec spec = opt.scene;
    spec.seed = mix_seed(opt.seed, 1);
    Sequence seq = render_sequence(spec);
    const FrameRecord& rec = idx.frame(1, 2);
    Tensor img = load_image_tensor(idx, rec);
    Tensor depth = load_depth_tensor(idx, rec);
    auto labels = load_label_map(idx, rec);
    const RenderedFrame& f = seq.frames[2];
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x) {
            CHECK(img.at({0, 0, y, x}) == static_cast<double>(f.image.at(y, x, 0)));
            CHECK(depth.at({0, 0, y, x}) ==
                  static_cast<double>(f.depth[static_cast<size_t>(y) * 64 + x]));
            CHECK(labels[static_cast<size_t>(y) * 64 + x] ==
                  f.labels[static_cast<size_t>(y) * 64 + x]);
        }

    // intrinsics survive the CSV round trip
    CHECK(rec.K.fx == doctest::Approx(seq.intrinsics.fx).epsilon(1e-15));
    CHECK(rec.K.cx == doctest::Approx(seq.intrinsics.cx).epsilon(1e-15));
    fs::remove_all(d);
}

TEST_CASE("stored relative poses match the camera path") {
    SceneSpec spec;
    spec.seed = 21;
    Sequence seq = render_sequence(spec);
    Tensor rel = relative_transform(seq.frames[1], seq.frames[2]);
    Pose p = pose_from_matrix(rel);
    Tensor rebuilt = pose_to_matrix(p);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(rebuilt.at({i, j}) == doctest::Approx(rel.at({i, j})).epsilon(1e-9));
}
