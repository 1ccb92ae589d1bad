#pragma once

#include <string>
#include <utility>
#include <vector>

#include "robustmtl/geometry.hpp"
#include "robustmtl/rng.hpp"
#include "robustmtl/tensor.hpp"

namespace rmtl {

struct NetworkConfig {
    int in_channels = 3;
    std::vector<int> encoder_widths{16, 32, 64, 128};
    int classes = 4;
    int scales = 4;  // depth sigmoid outputs, scale s at 1/2^s resolution
    int pose_width = 16;
};

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Inter-task gradient junction: identity in the forward pass, scales the
// gradient entering the shared encoder by lambda (segmentation path) or
// 1-lambda (depth path).
struct ScaleJunction {
    double lambda;
    explicit ScaleJunction(double l);

    enum class Task { kSeg, kDepth };
    std::vector<Tensor> apply(const std::vector<Tensor>& feats, Task task) const;
    double factor(Task task) const {
        return task == Task::kSeg ? lambda : 1.0 - lambda;
    }
};

struct Conv2dLayer {
    Tensor weight, bias;
    int stride = 1, pad = 1;
    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

struct BatchNormLayer {
    Tensor gamma, beta;
    BatchNormState state;
};

// Shared-encoder, two-decoder segmentation/depth model plus a separate pose
// network. Inputs are normalized images ((x/255 - 0.5) / 0.5, NCHW).
class MultiTaskModel {
  public:
    MultiTaskModel(NetworkConfig cfg, std::uint64_t seed);

    // bn_registry_ points into encoder_ storage; moves keep it valid,
    // copies would alias parameters between models
    MultiTaskModel(const MultiTaskModel&) = delete;
    MultiTaskModel& operator=(const MultiTaskModel&) = delete;
    MultiTaskModel(MultiTaskModel&&) = default;
    MultiTaskModel& operator=(MultiTaskModel&&) = default;

    const NetworkConfig& config() const { return cfg_; }
    void set_training(bool t) { training_ = t; }
    bool is_training() const { return training_; }

    // Encoder feature list, one tensor per block (highest resolution first).
    std::vector<Tensor> encode(const Tensor& x);

    // Decoder paths on a (possibly junction-scaled) feature list.
    Tensor seg_probs(const std::vector<Tensor>& feats);
    std::vector<Tensor> depth_sigmoids(const std::vector<Tensor>& feats);

    // Convenience full passes without junctions (inference graphs).
    Tensor forward_seg(const Tensor& x);
    std::vector<Tensor> forward_depth(const Tensor& x);

    // Relative pose for each (target, other) pair in the batch; rows are
    // (axis_angle, translation) * 0.01. Inputs {N,C,H,W} each.
    Tensor forward_pose(const Tensor& target, const Tensor& other);
    // Pose view of one row of forward_pose output.
    static Pose pose_row(const Tensor& pose_batch, int n);

    std::vector<NamedParam>& parameters() { return params_; }
    const std::vector<NamedParam>& parameters() const { return params_; }
    std::vector<std::pair<std::string, BatchNormState*>> bn_states();

    // Checkpoint: header, manifest of name/shape lines, then concatenated
    // TNSR records in manifest order (exact layout in docs/FORMATS.md).
    void save_checkpoint(const std::string& path,
                         const std::vector<NamedParam>& extra = {}) const;
    static MultiTaskModel load_checkpoint(const std::string& path,
                                          std::vector<NamedParam>* extra = nullptr);

  private:
    struct EncoderBlock {
        Conv2dLayer conv;
        BatchNormLayer bn;
    };
    struct DecoderLevel {
        Conv2dLayer upconv, postconv;
    };
    struct Decoder {
        std::vector<DecoderLevel> levels;  // index = scale level
    };

    Tensor decoder_run_level(Decoder& dec, int level, const Tensor& below,
                             const std::vector<Tensor>& feats);
    std::vector<Tensor> decoder_run(Decoder& dec, const std::vector<Tensor>& feats);

    NetworkConfig cfg_;
    bool training_ = true;
    std::vector<EncoderBlock> encoder_;
    Decoder seg_dec_, depth_dec_;
    Conv2dLayer seg_head_;
    std::vector<Conv2dLayer> disp_heads_;
    std::vector<Conv2dLayer> pose_convs_;
    std::vector<NamedParam> params_;
    std::vector<std::pair<std::string, BatchNormState*>> bn_registry_;
};

// (x/255 - 0.5) / 0.5 as a recorded graph op, so input gradients are
// expressed in gray-value units.
Tensor normalize_input(const Tensor& gray_image);

}  // namespace rmtl
