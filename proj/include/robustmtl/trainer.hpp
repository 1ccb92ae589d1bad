#pragma once

#include <optional>
#include <string>
#include <vector>

#include "robustmtl/losses.hpp"
#include "robustmtl/network.hpp"
#include "robustmtl/rng.hpp"
#include "robustmtl/synthdata.hpp"

namespace rmtl {

// NaN loss or similar unrecoverable training failure; carries diagnostics.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lambda = 0.2;
    double lr = 1e-4;
    double lr_decayed = 1e-5;
    int epochs = 8;
    int decay_epoch = -1;  // <0: 3/4 of epochs (the 30-of-40 phase ratio)
    int batch_seg = 4;
    int batch_depth = 4;
    std::uint64_t seed = 0;
    bool flip = true;
    bool jitter = true;
    double brightness = 0.2, contrast = 0.2;
    bool seg_enabled = true;
    bool depth_enabled = true;
    bool photometric_scale_mean = true;  // average (default) or sum over scales
    NetworkConfig net;

    int resolved_decay_epoch() const { return decay_epoch >= 0 ? decay_epoch : 3 * epochs / 4; }
};

// Step schedule with a single decay.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
  public:
    explicit Adam(std::vector<NamedParam>& params, AdamConfig cfg = {});

    // One bias-corrected update from the gradients currently on the
    // parameters (missing gradient buffers count as zero). If any gradient
    // is non-finite, applies nothing and returns false.
    bool step(double lr);
    std::int64_t steps_taken() const { return t_; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<NamedParam>* params_;
    std::vector<Moments> moments_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

// One optimization step's inputs, already augmented.
struct StepBatch {
    Tensor seg_images;  // {B,3,H,W} gray values, network input (augmented)
    Tensor seg_onehot;  // {B,S,H,W}
    Tensor t_input, prev_input, next_input;  // gray, augmented triplet frames
    Tensor t_target01, prev01, next01;       // [0,1], flip only (photometric buffers)
    Intrinsics K;
    int seg_count = 0, depth_count = 0;
};

class Trainer {
  public:
    Trainer(TrainConfig cfg, const DatasetIndex& data);

    const TrainConfig& config() const { return cfg_; }
    MultiTaskModel& model() { return model_; }
    Adam& optimizer() { return adam_; }
    const ClassWeights& weights() const { return weights_; }

    // Deterministic batch assembly from the per-purpose RNG streams.
    StepBatch next_batch();
    // Fixed-id batch for measurements; augmentation optional.
    StepBatch make_batch(const std::vector<int>& seg_triplets,
                         const std::vector<int>& depth_triplets, bool augment);

    // Forward both heads, combine the task gradients at the junctions, and
    // populate parameter gradients. No optimizer update.
    LossReport forward_backward(const StepBatch& batch);
    // forward_backward + one Adam step at the given learning rate.
    LossReport train_step(const StepBatch& batch, double lr);

    int steps_per_epoch() const;
    // Full run; appends "epoch,step,j_ce,j_ph,j_sm,j_depth" rows to log.
    std::vector<LossReport> run(std::ostream* log = nullptr);

    void save_checkpoint(const std::string& path) const;

  private:
    struct CachedTriplet {
        Tensor frames[3];                 // {1,3,H,W} gray
        std::vector<std::uint8_t> labels;  // center frame
    };
    Tensor augment_gray(const Tensor& img, bool flip, double brightness, double contrast) const;

    TrainConfig cfg_;
    const DatasetIndex* data_;
    MultiTaskModel model_;
    Adam adam_;
    ClassWeights weights_;
    Intrinsics K_;
    int img_h_ = 0, img_w_ = 0;
    std::vector<int> train_ids_;
    std::vector<CachedTriplet> cache_;  // indexed by triplet id
    std::vector<int> seg_order_, depth_order_;
    size_t seg_cursor_ = 0, depth_cursor_ = 0;
    Rng shuffle_seg_, shuffle_depth_, aug_seg_, aug_depth_;
};

}  // namespace rmtl
