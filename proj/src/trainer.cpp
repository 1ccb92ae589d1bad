#include "robustmtl/trainer.hpp"

#include <cmath>
#include <ostream>

namespace rmtl {

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ContractError("lr_schedule: negative epoch");
    return epoch < cfg.resolved_decay_epoch() ? cfg.lr : cfg.lr_decayed;
}

Adam::Adam(std::vector<NamedParam>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    moments_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const size_t n = static_cast<size_t>(params[i].tensor.numel());
        moments_[i].m.assign(n, 0.0);
        moments_[i].v.assign(n, 0.0);
    }
}

bool Adam::step(double lr) {
    for (auto& p : *params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) return false;
    }
    t_++;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
        auto& p = (*params_)[i];
        auto data = p.tensor.data();
        auto& mom = moments_[i];
        const bool has_grad = p.tensor.has_grad();
        for (size_t j = 0; j < data.size(); ++j) {
            const double g = has_grad ? p.tensor.grad()[j] : 0.0;
            mom.m[j] = cfg_.beta1 * mom.m[j] + (1.0 - cfg_.beta1) * g;
            mom.v[j] = cfg_.beta2 * mom.v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[j] / bc1;
            const double vhat = mom.v[j] / bc2;
            data[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    return true;
}

Trainer::Trainer(TrainConfig cfg, const DatasetIndex& data)
    : cfg_(std::move(cfg)),
      data_(&data),
      model_(cfg_.net, cfg_.seed),
      adam_(model_.parameters()),
      shuffle_seg_(mix_seed(cfg_.seed, 0x5e6)),
      shuffle_depth_(mix_seed(cfg_.seed, 0xde9)),
      aug_seg_(mix_seed(cfg_.seed, 0xa5e6)),
      aug_depth_(mix_seed(cfg_.seed, 0xade9)) {
    if (cfg_.lambda < 0.0 || cfg_.lambda > 1.0)
        throw ConfigError("lambda must lie in [0,1], got " + std::to_string(cfg_.lambda));
    if (cfg_.epochs <= 0 || cfg_.batch_seg <= 0 || cfg_.batch_depth <= 0 || cfg_.lr <= 0)
        throw ConfigError("train config values must be positive");

    train_ids_ = data_->triplets("train");
    if (train_ids_.empty()) throw ContractError("dataset has no training triplets");

    int max_id = 0;
    for (int t : train_ids_) max_id = std::max(max_id, t);
    cache_.resize(static_cast<size_t>(max_id) + 1);
    std::vector<std::int64_t> hist(static_cast<size_t>(cfg_.net.classes), 0);
    for (int t : train_ids_) {
        CachedTriplet& ct = cache_[static_cast<size_t>(t)];
        for (int s = 0; s < 3; ++s) ct.frames[s] = load_image_tensor(*data_, data_->frame(t, s));
        ct.labels = load_label_map(*data_, data_->frame(t, 1));
        for (std::uint8_t l : ct.labels)
            if (l != 255) hist[static_cast<size_t>(l)]++;
    }
    weights_ = class_weights(hist);
    K_ = data_->frame(train_ids_[0], 1).K;
    img_h_ = cache_[static_cast<size_t>(train_ids_[0])].frames[1].dim(2);
    img_w_ = cache_[static_cast<size_t>(train_ids_[0])].frames[1].dim(3);
}

Tensor Trainer::augment_gray(const Tensor& img, bool flip, double brightness,
                             double contrast) const {
    Tensor out = flip ? hflip(img).detach() : img.detach();
    if (brightness != 0.0 || contrast != 0.0) {
        auto d = out.data();
        const double scale = 1.0 + contrast;
        const double shift = 127.5 + 255.0 * brightness;
        for (auto& v : d) v = (v - 127.5) * scale + shift;
    }
    return out;
}

int Trainer::steps_per_epoch() const {
    const int n = static_cast<int>(train_ids_.size());
    const int b = cfg_.depth_enabled ? cfg_.batch_depth : cfg_.batch_seg;
    return (n + b - 1) / b;
}

StepBatch Trainer::next_batch() {
    std::vector<int> seg_ids, depth_ids;
    if (cfg_.seg_enabled) {
        for (int i = 0; i < cfg_.batch_seg; ++i) {
            if (seg_cursor_ == 0) {
                seg_order_ = train_ids_;
                shuffle_seg_.shuffle(seg_order_);
            }
            seg_ids.push_back(seg_order_[seg_cursor_]);
            seg_cursor_ = (seg_cursor_ + 1) % seg_order_.size();
        }
    }
    if (cfg_.depth_enabled) {
        for (int i = 0; i < cfg_.batch_depth; ++i) {
            if (depth_cursor_ == 0) {
                depth_order_ = train_ids_;
                shuffle_depth_.shuffle(depth_order_);
            }
            depth_ids.push_back(depth_order_[depth_cursor_]);
            depth_cursor_ = (depth_cursor_ + 1) % depth_order_.size();
        }
    }
    return make_batch(seg_ids, depth_ids, true);
}

StepBatch Trainer::make_batch(const std::vector<int>& seg_triplets,
                              const std::vector<int>& depth_triplets, bool augment) {
    StepBatch b;
    b.K = K_;
    b.seg_count = static_cast<int>(seg_triplets.size());
    b.depth_count = static_cast<int>(depth_triplets.size());

    if (b.seg_count > 0) {
        std::vector<Tensor> imgs, hots;
        for (int t : seg_triplets) {
            const CachedTriplet& ct = cache_.at(static_cast<size_t>(t));
            const bool flip = augment && cfg_.flip && aug_seg_.uniform() < 0.5;
            const double br = augment && cfg_.jitter ? aug_seg_.uniform(-cfg_.brightness, cfg_.brightness) : 0.0;
            const double co = augment && cfg_.jitter ? aug_seg_.uniform(-cfg_.contrast, cfg_.contrast) : 0.0;
            imgs.push_back(augment_gray(ct.frames[1], flip, br, co));
            std::vector<std::uint8_t> labels = ct.labels;
            if (flip) {
                for (int y = 0; y < img_h_; ++y)
                    std::reverse(labels.begin() + static_cast<std::ptrdiff_t>(y) * img_w_,
                                 labels.begin() + static_cast<std::ptrdiff_t>(y + 1) * img_w_);
            }
            hots.push_back(one_hot(labels, img_h_, img_w_, cfg_.net.classes));
        }
        b.seg_images = imgs.size() == 1 ? imgs[0] : concat(imgs, 0);
        b.seg_onehot = hots.size() == 1 ? hots[0] : concat(hots, 0);
    }

    if (b.depth_count > 0) {
        std::vector<Tensor> tin, pin, nin, t01, p01, n01;
        for (int t : depth_triplets) {
            const CachedTriplet& ct = cache_.at(static_cast<size_t>(t));
            // one augmentation draw per triplet, shared by all three frames
            const bool flip = augment && cfg_.flip && aug_depth_.uniform() < 0.5;
            const double br = augment && cfg_.jitter ? aug_depth_.uniform(-cfg_.brightness, cfg_.brightness) : 0.0;
            const double co = augment && cfg_.jitter ? aug_depth_.uniform(-cfg_.contrast, cfg_.contrast) : 0.0;
            pin.push_back(augment_gray(ct.frames[0], flip, br, co));
            tin.push_back(augment_gray(ct.frames[1], flip, br, co));
            nin.push_back(augment_gray(ct.frames[2], flip, br, co));
            // photometric buffers: flip only, no color jitter
            p01.push_back(mul_scalar(augment_gray(ct.frames[0], flip, 0, 0), 1.0 / 255.0));
            t01.push_back(mul_scalar(augment_gray(ct.frames[1], flip, 0, 0), 1.0 / 255.0));
            n01.push_back(mul_scalar(augment_gray(ct.frames[2], flip, 0, 0), 1.0 / 255.0));
        }
        auto cat = [](std::vector<Tensor>& v) { return v.size() == 1 ? v[0] : concat(v, 0); };
        b.prev_input = cat(pin), b.t_input = cat(tin), b.next_input = cat(nin);
        b.prev01 = cat(p01), b.t_target01 = cat(t01), b.next01 = cat(n01);
    }
    return b;
}

LossReport Trainer::forward_backward(const StepBatch& batch) {
    if (batch.seg_count == 0 && batch.depth_count == 0)
        throw ContractError("train step needs at least one non-empty batch");
    model_.set_training(true);
    const ScaleJunction junction(cfg_.lambda);
    LossReport report;
    Tensor total;

    if (batch.seg_count > 0) {
        auto feats = junction.apply(model_.encode(normalize_input(batch.seg_images)),
                                    ScaleJunction::Task::kSeg);
        Tensor probs = model_.seg_probs(feats);
        Tensor j_ce = weighted_cross_entropy(probs, batch.seg_onehot, weights_);
        report.j_ce = j_ce.item();
        total = j_ce;
    }

    if (batch.depth_count > 0) {
        auto feats = junction.apply(model_.encode(normalize_input(batch.t_input)),
                                    ScaleJunction::Task::kDepth);
        std::vector<Tensor> sigmoids = model_.depth_sigmoids(feats);

        // pose gradients follow the depth path: scaled by 1 - lambda
        const double pose_factor = junction.factor(ScaleJunction::Task::kDepth);
        Tensor pose_prev = grad_scale(
            model_.forward_pose(normalize_input(batch.t_input), normalize_input(batch.prev_input)),
            pose_factor);
        Tensor pose_next = grad_scale(
            model_.forward_pose(normalize_input(batch.t_input), normalize_input(batch.next_input)),
            pose_factor);

        // image pyramid of the photometric target (constants)
        std::vector<Tensor> pyramid{batch.t_target01};
        for (int s = 1; s < static_cast<int>(sigmoids.size()); ++s)
            pyramid.push_back(avg_pool2(pyramid.back()).detach());

        Tensor j_ph_total, j_sm_total;
        for (size_t s = 0; s < sigmoids.size(); ++s) {
            Tensor sigma_full = sigmoids[s];
            for (size_t u = 0; u < s; ++u) sigma_full = upsample_nearest2(sigma_full);
            Tensor depth = disparity_to_depth(sigma_full);

            std::vector<Tensor> grids_prev, grids_next;
            for (int n = 0; n < batch.depth_count; ++n) {
                Tensor dn = batch.depth_count == 1 ? depth : slice(depth, 0, n, 1);
                grids_prev.push_back(
                    reproject_grid(dn, pose_to_matrix(MultiTaskModel::pose_row(pose_prev, n)), K_));
                grids_next.push_back(
                    reproject_grid(dn, pose_to_matrix(MultiTaskModel::pose_row(pose_next, n)), K_));
            }
            auto cat0 = [&](std::vector<Tensor>& g) { return g.size() == 1 ? g[0] : concat(g, 0); };
            Tensor warped_prev = grid_sample(batch.prev01, cat0(grids_prev));
            Tensor warped_next = grid_sample(batch.next01, cat0(grids_next));

            Tensor j_ph = photometric_loss(batch.t_target01, {warped_prev, warped_next});
            Tensor disp_native = add_scalar(mul_scalar(sigmoids[s], kDispA), kDispB);
            Tensor j_sm = smoothness_loss(disp_native, pyramid[s]);

            report.per_scale.push_back({j_ph.item(), j_sm.item()});
            Tensor j_sm_w = mul_scalar(j_sm, 1.0 / static_cast<double>(1 << s));
            j_ph_total = j_ph_total.defined() ? add(j_ph_total, j_ph) : j_ph;
            j_sm_total = j_sm_total.defined() ? add(j_sm_total, j_sm_w) : j_sm_w;
        }
        if (cfg_.photometric_scale_mean) {
            const double inv = 1.0 / static_cast<double>(sigmoids.size());
            j_ph_total = mul_scalar(j_ph_total, inv);
            j_sm_total = mul_scalar(j_sm_total, inv);
        }
        Tensor j_depth = depth_loss(j_ph_total, j_sm_total);
        report.j_ph = j_ph_total.item();
        report.j_sm = j_sm_total.item();
        report.j_depth = j_depth.item();
        total = total.defined() ? add(total, j_depth) : j_depth;
    }

    if (!std::isfinite(total.item()))
        throw TrainingError("non-finite loss (j_ce=" + std::to_string(report.j_ce) +
                            ", j_depth=" + std::to_string(report.j_depth) + "), aborting epoch");
    backward(total);
    return report;
}

LossReport Trainer::train_step(const StepBatch& batch, double lr) {
    LossReport report = forward_backward(batch);
    if (!adam_.step(lr))
        std::fputs("warning: non-finite gradient, optimizer step skipped\n", stderr);
    return report;
}

std::vector<LossReport> Trainer::run(std::ostream* log) {
    std::vector<LossReport> reports;
    if (log) *log << "epoch,step,j_ce,j_ph,j_sm,j_depth\n";
    const int steps = steps_per_epoch();
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg_);
        for (int step = 0; step < steps; ++step) {
            LossReport r = train_step(next_batch(), lr);
            if (log) {
                char row[160];
                std::snprintf(row, sizeof(row), "%d,%d,%.9g,%.9g,%.9g,%.9g\n", epoch, step, r.j_ce,
                              r.j_ph, r.j_sm, r.j_depth);
                *log << row;
            }
            reports.push_back(std::move(r));
        }
    }
    return reports;
}

void Trainer::save_checkpoint(const std::string& path) const {
    std::vector<NamedParam> extra;
    extra.push_back(
        {"class_weights", Tensor::from_data({static_cast<int>(weights_.w.size())}, weights_.w)});
    model_.save_checkpoint(path, extra);
}

}  // namespace rmtl
