#pragma once

#include <array>
#include <string>
#include <vector>

#include "robustmtl/geometry.hpp"
#include "robustmtl/imageio.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

// Semantic classes emitted by the renderer.
enum SynthClass : std::uint8_t { kGround = 0, kSky = 1, kBox = 2, kBall = 3 };

struct SceneSpec {
    std::uint64_t seed = 0;
    int width = 128, height = 96;
    int classes = 4;
    int min_objects = 2, max_objects = 5;
    double texture_freq = 1.0;   // multiplier on the procedural texture scale
    double motion_scale = 1.0;   // camera walk amplitude; 0 freezes the camera
    int frames = 3;
};

inline constexpr double kSceneDepthMin = 0.5;
inline constexpr double kSceneDepthMax = 80.0;

struct RenderedFrame {
    ImageU8 image;                     // RGB
    std::vector<std::uint8_t> labels;  // h*w class ids
    std::vector<float> depth;          // h*w camera-frame z
    Tensor cam_to_world;               // {4,4}
};

struct Sequence {
    std::vector<RenderedFrame> frames;
    Intrinsics intrinsics;
};

// Ray-casts `spec.frames` views of one procedural scene (textured ground
// plane, sky, floating boxes and balls) along a smooth random camera walk.
// Emitted images, depths, labels and poses are mutually consistent: warping
// a neighbor frame into the center one with them reproduces it up to
// interpolation error.
Sequence render_sequence(const SceneSpec& spec);

// Fronto-parallel textured wall at `depth`, viewed from the origin and
// after advancing `dz` along the optical axis. Fixture for the closed-form
// radial-flow check.
Sequence render_wall_pair(double depth, double dz, const SceneSpec& spec);

// Relative transform mapping camera-frame coordinates of `from` into the
// camera frame of `to`.
Tensor relative_transform(const RenderedFrame& from, const RenderedFrame& to);

// --- on-disk dataset ------------------------------------------------------

struct FrameRecord {
    int triplet = 0, slot = 0;  // slot 0,1,2 inside the triplet
    std::string image, label, depth;  // paths relative to the index directory
    Intrinsics K;
    bool has_prev = false, has_next = false;
    std::array<double, 6> pose_prev{};  // axis-angle + translation, this frame -> prev
    std::array<double, 6> pose_next{};  // this frame -> next
    std::string split;                  // train / val / test
};

struct DatasetIndex {
    std::string root;
    std::vector<FrameRecord> records;  // laid out triplet-major, slots 0..2

    std::vector<int> triplets(const std::string& split) const;
    const FrameRecord& frame(int triplet, int slot) const;
    int triplet_count() const { return static_cast<int>(records.size()) / 3; }
};

struct GenOptions {
    std::uint64_t seed = 0;
    int count = 12;  // triplets
    SceneSpec scene;
    double train_frac = 0.7, val_frac = 0.15;  // remainder is the test split
};

// Renders `count` triplets into dir and writes index.csv. Returns the index.
DatasetIndex generate_dataset(const GenOptions& opt, const std::string& dir);
DatasetIndex load_dataset(const std::string& dir);

Tensor load_image_tensor(const DatasetIndex& idx, const FrameRecord& rec);  // {1,3,H,W} 0..255
std::vector<std::uint8_t> load_label_map(const DatasetIndex& idx, const FrameRecord& rec);
Tensor load_depth_tensor(const DatasetIndex& idx, const FrameRecord& rec);  // {1,1,H,W}

}  // namespace rmtl
