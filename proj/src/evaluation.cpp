#include "robustmtl/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "robustmtl/parallel.hpp"
#include "robustmtl/rng.hpp"

namespace rmtl {

ConfusionMatrix::ConfusionMatrix(int classes)
    : tp_(static_cast<size_t>(classes), 0),
      fp_(static_cast<size_t>(classes), 0),
      fn_(static_cast<size_t>(classes), 0) {
    if (classes <= 0) throw ContractError("confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size()) throw DimensionError("accumulate: mask sizes differ");
    for (size_t i = 0; i < pred.size(); ++i) {
        const int t = truth[i];
        if (t == 255) continue;
        const int p = pred[i];
        if (p >= classes() || t >= classes()) throw ContractError("accumulate: label out of range");
        if (p == t) {
            tp_[static_cast<size_t>(p)]++;
        } else {
            fp_[static_cast<size_t>(p)]++;
            fn_[static_cast<size_t>(t)]++;
        }
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes() != classes()) throw DimensionError("merge: class count mismatch");
    for (int c = 0; c < classes(); ++c) {
        tp_[static_cast<size_t>(c)] += other.tp_[static_cast<size_t>(c)];
        fp_[static_cast<size_t>(c)] += other.fp_[static_cast<size_t>(c)];
        fn_[static_cast<size_t>(c)] += other.fn_[static_cast<size_t>(c)];
    }
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (size_t c = 0; c < tp_.size(); ++c) t += tp_[c] + fn_[c];
    return t;
}

std::vector<std::uint8_t> argmax_mask(const Tensor& probs) {
    if (probs.ndim() != 4 || probs.dim(0) != 1)
        throw DimensionError("argmax_mask: expected {1,S,H,W}");
    const int S = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    std::vector<std::uint8_t> mask(static_cast<size_t>(plane));
    const double* p = probs.data().data();
    for (std::int64_t i = 0; i < plane; ++i) {
        int best = 0;
        double best_v = p[i];
        for (int c = 1; c < S; ++c) {
            const double v = p[c * plane + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        mask[static_cast<size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return mask;
}

double miou(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("miou: empty confusion matrix");
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        const std::int64_t den = cm.tp(c) + cm.fp(c) + cm.fn(c);
        if (den == 0) continue;  // absent from both prediction and truth
        sum += static_cast<double>(cm.tp(c)) / static_cast<double>(den);
        present++;
    }
    return sum / static_cast<double>(present);
}

double q_ratio(double miou_adv, double miou_clean) {
    if (!(miou_clean > 0.0)) throw ContractError("q_ratio: clean mIoU must be positive");
    return miou_adv / miou_clean;
}

namespace {

// eval-set frame with everything attacks and scoring need
struct EvalItem {
    Tensor image;
    std::vector<std::uint8_t> labels;
    Tensor onehot;
};

std::vector<EvalItem> load_split(const DatasetIndex& data, const std::string& split, int classes) {
    std::vector<EvalItem> items;
    for (int t : data.triplets(split)) {
        const FrameRecord& rec = data.frame(t, 1);
        EvalItem it;
        it.image = load_image_tensor(data, rec);
        it.labels = load_label_map(data, rec);
        it.onehot = one_hot(it.labels, it.image.dim(2), it.image.dim(3), classes);
        items.push_back(std::move(it));
    }
    if (items.empty()) throw ContractError("split '" + split + "' has no frames");
    return items;
}

// Parameters stop requiring grad while attacks run, so concurrent
// backward passes only ever write to their own input leaves.
struct FrozenParams {
    explicit FrozenParams(MultiTaskModel& m) : model(&m) {
        for (auto& p : m.parameters()) {
            saved.push_back(p.tensor.requires_grad());
            p.tensor.set_requires_grad(false);
        }
        was_training = m.is_training();
        m.set_training(false);
    }
    ~FrozenParams() {
        for (size_t i = 0; i < saved.size(); ++i)
            model->parameters()[i].tensor.set_requires_grad(saved[i]);
        model->set_training(was_training);
    }
    MultiTaskModel* model;
    std::vector<bool> saved;
    bool was_training = false;
};

}  // namespace

SweepResult run_sweep(MultiTaskModel& model, const ClassWeights& weights,
                      const DatasetIndex& data, const SweepOptions& opt) {
    const FrozenParams frozen(model);
    const int classes = model.config().classes;
    const std::vector<EvalItem> items = load_split(data, opt.split, classes);
    const std::vector<double>& grid =
        !opt.grid.empty() ? opt.grid
                          : (opt.base.family == PerturbFamily::kSaltPepper ? default_fraction_grid()
                                                                           : default_eps_grid());
    const int n = static_cast<int>(items.size());
    set_num_threads(opt.jobs);

    // clean pass
    std::vector<std::vector<std::uint8_t>> clean_masks(static_cast<size_t>(n));
    parallel_for(n, [&](std::int64_t i) {
        clean_masks[static_cast<size_t>(i)] =
            argmax_mask(model.forward_seg(normalize_input(items[static_cast<size_t>(i)].image)));
    });
    ConfusionMatrix cm_clean(classes);
    for (int i = 0; i < n; ++i)
        cm_clean.accumulate(clean_masks[static_cast<size_t>(i)], items[static_cast<size_t>(i)].labels);
    const double miou_clean = miou(cm_clean);

    SweepResult res;
    res.family = opt.base.family;
    res.miou_clean = miou_clean;
    res.rows.push_back({0.0, 0.0, std::numeric_limits<double>::infinity(), miou_clean, miou_clean,
                        q_ratio(miou_clean, miou_clean)});

    for (double strength : grid) {
        std::vector<ConfusionMatrix> cms(static_cast<size_t>(n), ConfusionMatrix(classes));
        std::vector<double> sum_r2(static_cast<size_t>(n)), sum_x2(static_cast<size_t>(n));
        parallel_for(n, [&](std::int64_t i) {
            const EvalItem& it = items[static_cast<size_t>(i)];
            PerturbationSpec spec = opt.base;
            if (spec.family == PerturbFamily::kSaltPepper)
                spec.fraction = strength;
            else
                spec.epsilon = strength;
            spec.seed = mix_seed(opt.base.seed, static_cast<std::uint64_t>(i));
            Tensor onehot = it.onehot;
            if (spec.predicted_labels)
                onehot = one_hot(clean_masks[static_cast<size_t>(i)], it.image.dim(2),
                                 it.image.dim(3), classes);
            PerturbedImage adv = apply_perturbation(spec, it.image, &model, &onehot, &weights);
            auto mask = argmax_mask(model.forward_seg(normalize_input(adv.x_adv)));
            cms[static_cast<size_t>(i)].accumulate(mask, it.labels);
            double r2 = 0.0, x2 = 0.0;
            for (std::int64_t j = 0; j < adv.r.numel(); ++j) {
                r2 += adv.r.data()[static_cast<size_t>(j)] * adv.r.data()[static_cast<size_t>(j)];
                x2 += it.image.data()[static_cast<size_t>(j)] * it.image.data()[static_cast<size_t>(j)];
            }
            sum_r2[static_cast<size_t>(i)] = r2;
            sum_x2[static_cast<size_t>(i)] = x2;
        });
        ConfusionMatrix cm(classes);
        double r2 = 0.0, x2 = 0.0, count = 0.0;
        for (int i = 0; i < n; ++i) {
            cm.merge(cms[static_cast<size_t>(i)]);
            r2 += sum_r2[static_cast<size_t>(i)];
            x2 += sum_x2[static_cast<size_t>(i)];
            count += static_cast<double>(items[static_cast<size_t>(i)].image.numel());
        }
        const double miou_adv = miou(cm);
        SweepRow row;
        row.eps_requested = strength;
        row.eps_measured = std::sqrt(r2 / count);
        row.snr = r2 == 0.0 ? std::numeric_limits<double>::infinity() : x2 / r2;
        row.miou_clean = miou_clean;
        row.miou_adv = miou_adv;
        row.q = q_ratio(miou_adv, miou_clean);
        res.rows.push_back(row);
    }
    return res;
}

double evaluate_miou(MultiTaskModel& model, const DatasetIndex& data, const std::string& split,
                     int jobs) {
    const FrozenParams frozen(model);
    const int classes = model.config().classes;
    const std::vector<EvalItem> items = load_split(data, split, classes);
    const int n = static_cast<int>(items.size());
    set_num_threads(jobs);
    std::vector<std::vector<std::uint8_t>> masks(static_cast<size_t>(n));
    parallel_for(n, [&](std::int64_t i) {
        masks[static_cast<size_t>(i)] =
            argmax_mask(model.forward_seg(normalize_input(items[static_cast<size_t>(i)].image)));
    });
    ConfusionMatrix cm(classes);
    for (int i = 0; i < n; ++i)
        cm.accumulate(masks[static_cast<size_t>(i)], items[static_cast<size_t>(i)].labels);
    return miou(cm);
}

double majority_baseline_miou(const DatasetIndex& data, const std::string& split, int classes) {
    std::vector<std::int64_t> hist(static_cast<size_t>(classes), 0);
    std::vector<std::vector<std::uint8_t>> labels;
    for (int t : data.triplets(split)) {
        labels.push_back(load_label_map(data, data.frame(t, 1)));
        for (std::uint8_t l : labels.back())
            if (l != 255) hist[static_cast<size_t>(l)]++;
    }
    int majority = 0;
    for (int c = 1; c < classes; ++c)
        if (hist[static_cast<size_t>(c)] > hist[static_cast<size_t>(majority)]) majority = c;
    ConfusionMatrix cm(classes);
    for (const auto& l : labels) {
        std::vector<std::uint8_t> pred(l.size(), static_cast<std::uint8_t>(majority));
        cm.accumulate(pred, l);
    }
    return miou(cm);
}

void write_sweep_csv(const SweepResult& res, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "family,eps_requested,eps_measured,snr,miou_clean,miou_adv,q\n";
    for (const auto& r : res.rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                      to_string(res.family).c_str(), r.eps_requested, r.eps_measured, r.snr,
                      r.miou_clean, r.miou_adv, r.q);
        f << buf;
    }
    if (!f) throw IoError("write failed: " + path);
}

SweepResult read_sweep_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    SweepResult res;
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty sweep csv: " + path);
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cols;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() != 7) throw IoError("bad sweep row in " + path + ": '" + line + "'");
        if (first) {
            res.family = perturb_family_from_string(cols[0]);
            first = false;
        }
        SweepRow r;
        r.eps_requested = std::stod(cols[1]);
        r.eps_measured = std::stod(cols[2]);
        r.snr = cols[3] == "inf" ? std::numeric_limits<double>::infinity() : std::stod(cols[3]);
        r.miou_clean = std::stod(cols[4]);
        r.miou_adv = std::stod(cols[5]);
        r.q = std::stod(cols[6]);
        res.miou_clean = r.miou_clean;
        res.rows.push_back(r);
    }
    return res;
}

}  // namespace rmtl
