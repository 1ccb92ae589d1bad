#pragma once

#include <string>
#include <vector>

#include "robustmtl/losses.hpp"
#include "robustmtl/network.hpp"
#include "robustmtl/perturb.hpp"
#include "robustmtl/synthdata.hpp"

namespace rmtl {

// Per-class TP/FP/FN counters pooled over whole test sets.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int classes);

    // Pixels whose truth label is 255 are ignored.
    void accumulate(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);
    void merge(const ConfusionMatrix& other);

    int classes() const { return static_cast<int>(tp_.size()); }
    std::int64_t tp(int c) const { return tp_[static_cast<size_t>(c)]; }
    std::int64_t fp(int c) const { return fp_[static_cast<size_t>(c)]; }
    std::int64_t fn(int c) const { return fn_[static_cast<size_t>(c)]; }
    std::int64_t total() const;

  private:
    std::vector<std::int64_t> tp_, fp_, fn_;
};

// Per-pixel argmax over the class axis of {1,S,H,W} probabilities; ties go
// to the lowest class index.
std::vector<std::uint8_t> argmax_mask(const Tensor& probs);

// Mean over classes of TP/(TP+FP+FN); classes with zero denominator (absent
// from both prediction and truth) are excluded from the mean.
double miou(const ConfusionMatrix& cm);

double q_ratio(double miou_adv, double miou_clean);

struct SweepRow {
    double eps_requested = 0, eps_measured = 0, snr = 0;
    double miou_clean = 0, miou_adv = 0, q = 0;
};

struct SweepResult {
    PerturbFamily family = PerturbFamily::kGaussian;
    double miou_clean = 0;
    std::vector<SweepRow> rows;  // clean row (eps 0) first, then the grid
};

inline const std::vector<double>& default_eps_grid() {
    static const std::vector<double> g{0.25, 0.5, 1, 2, 4, 8, 16};
    return g;
}
inline const std::vector<double>& default_fraction_grid() {
    static const std::vector<double> g{0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2};
    return g;
}

struct SweepOptions {
    PerturbationSpec base;      // family, pgd params, clip, label mode, seed
    std::vector<double> grid;   // strengths; empty selects the family default
    std::string split = "test";
    int jobs = 1;
};

// Clean pass first, then one full pass over the split per grid strength,
// pooling one confusion matrix (and the measured eps/SNR) across the set.
SweepResult run_sweep(MultiTaskModel& model, const ClassWeights& weights,
                      const DatasetIndex& data, const SweepOptions& opt);

void write_sweep_csv(const SweepResult& res, const std::string& path);
SweepResult read_sweep_csv(const std::string& path);

// Clean mIoU of the segmentation head over a split.
double evaluate_miou(MultiTaskModel& model, const DatasetIndex& data, const std::string& split,
                     int jobs = 1);

// mIoU of always predicting the most frequent class of the split.
double majority_baseline_miou(const DatasetIndex& data, const std::string& split, int classes);

// Renders Q-vs-epsilon curves (log-x) of one or more sweep CSVs into an SVG.
void write_report_svg(const std::vector<std::string>& csv_paths, const std::string& out_path);

}  // namespace rmtl
