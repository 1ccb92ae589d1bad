#include "robustmtl/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "robustmtl/serialize.hpp"

namespace rmtl {

ScaleJunction::ScaleJunction(double l) : lambda(l) {
    if (!(l >= 0.0 && l <= 1.0))
        throw ConfigError("gradient scaling factor must lie in [0,1], got " + std::to_string(l));
}

std::vector<Tensor> ScaleJunction::apply(const std::vector<Tensor>& feats, Task task) const {
    const double f = factor(task);
    std::vector<Tensor> out;
    out.reserve(feats.size());
    for (const Tensor& t : feats) out.push_back(grad_scale(t, f));
    return out;
}

Tensor normalize_input(const Tensor& gray_image) {
    return mul_scalar(add_scalar(mul_scalar(gray_image, 1.0 / 255.0), -0.5), 2.0);
}

namespace {

Tensor init_conv_weight(int co, int ci, int k, Rng& rng, double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / (static_cast<double>(ci) * k * k));
    std::vector<double> w(static_cast<size_t>(co) * ci * k * k);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Tensor::from_data({co, ci, k, k}, std::move(w), true);
}

int dec_width(const NetworkConfig& cfg, int level) {
    return std::max(cfg.encoder_widths.front(), cfg.encoder_widths[static_cast<size_t>(level)] / 2);
}

}  // namespace

MultiTaskModel::MultiTaskModel(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    Rng rng(mix_seed(seed, 0xa11c));
    const int L = static_cast<int>(cfg_.encoder_widths.size());
    if (cfg_.scales > L) throw ConfigError("scales cannot exceed encoder depth");

    auto add_param = [&](const std::string& name, Tensor t) {
        params_.push_back({name, t});
        return t;
    };
    auto make_conv = [&](const std::string& name, int ci, int co, int k, int stride,
                         double gain = 1.0) {
        Conv2dLayer l;
        l.weight = add_param(name + ".w", init_conv_weight(co, ci, k, rng, gain));
        l.bias = add_param(name + ".b", Tensor::zeros({co}, true));
        l.stride = stride;
        l.pad = k / 2;
        return l;
    };

    // encoder: conv(s2) + batch-norm + relu per block
    int ci = cfg_.in_channels;
    for (int i = 0; i < L; ++i) {
        const int co = cfg_.encoder_widths[static_cast<size_t>(i)];
        EncoderBlock blk;
        const std::string base = "encoder.b" + std::to_string(i);
        blk.conv = make_conv(base + ".conv", ci, co, 3, 2);
        blk.bn.gamma = add_param(base + ".bn.gamma", Tensor::full({co}, 1.0, true));
        blk.bn.beta = add_param(base + ".bn.beta", Tensor::zeros({co}, true));
        blk.bn.state.init(co);
        encoder_.push_back(std::move(blk));
        ci = co;
    }

    // two decoders with identical shape, ELU activations, skip concats
    auto make_decoder = [&](const std::string& base) {
        Decoder dec;
        dec.levels.resize(static_cast<size_t>(L));
        for (int s = L - 1; s >= 0; --s) {
            const int below = s == L - 1 ? cfg_.encoder_widths.back() : dec_width(cfg_, s + 1);
            const int w = dec_width(cfg_, s);
            const int skip = s >= 1 ? cfg_.encoder_widths[static_cast<size_t>(s - 1)] : 0;
            DecoderLevel lvl;
            lvl.upconv = make_conv(base + ".l" + std::to_string(s) + ".up", below, w, 3, 1);
            lvl.postconv = make_conv(base + ".l" + std::to_string(s) + ".post", w + skip, w, 3, 1);
            dec.levels[static_cast<size_t>(s)] = std::move(lvl);
        }
        return dec;
    };
    seg_dec_ = make_decoder("seg_dec");
    depth_dec_ = make_decoder("depth_dec");
    seg_head_ = make_conv("seg_head", dec_width(cfg_, 0), cfg_.classes, 3, 1);
    for (int s = 0; s < cfg_.scales; ++s)
        disp_heads_.push_back(make_conv("disp_head.s" + std::to_string(s), dec_width(cfg_, s), 1, 3, 1));

    // pose network: small conv stack on a concatenated frame pair
    const int pw = cfg_.pose_width;
    pose_convs_.push_back(make_conv("pose.c0", 2 * cfg_.in_channels, pw, 3, 2));
    pose_convs_.push_back(make_conv("pose.c1", pw, 2 * pw, 3, 2));
    pose_convs_.push_back(make_conv("pose.c2", 2 * pw, 2 * pw, 3, 2));
    pose_convs_.push_back(make_conv("pose.out", 2 * pw, 6, 1, 1, 0.01));

    for (size_t i = 0; i < encoder_.size(); ++i)
        bn_registry_.push_back({"encoder.b" + std::to_string(i) + ".bn", &encoder_[i].bn.state});
}

std::vector<Tensor> MultiTaskModel::encode(const Tensor& x) {
    std::vector<Tensor> feats;
    Tensor cur = x;
    for (auto& blk : encoder_) {
        cur = relu(batch_norm(blk.conv(cur), blk.bn.gamma, blk.bn.beta, blk.bn.state, training_));
        feats.push_back(cur);
    }
    return feats;
}

Tensor MultiTaskModel::decoder_run_level(Decoder& dec, int level, const Tensor& below,
                                         const std::vector<Tensor>& feats) {
    DecoderLevel& lvl = dec.levels[static_cast<size_t>(level)];
    Tensor x = elu(lvl.upconv(upsample_nearest2(below)));
    if (level >= 1) x = concat({x, feats[static_cast<size_t>(level - 1)]}, 1);
    return elu(lvl.postconv(x));
}

std::vector<Tensor> MultiTaskModel::decoder_run(Decoder& dec, const std::vector<Tensor>& feats) {
    const int L = static_cast<int>(dec.levels.size());
    std::vector<Tensor> outs(static_cast<size_t>(L));
    Tensor cur = feats.back();
    for (int s = L - 1; s >= 0; --s) {
        cur = decoder_run_level(dec, s, cur, feats);
        outs[static_cast<size_t>(s)] = cur;
    }
    return outs;
}

Tensor MultiTaskModel::seg_probs(const std::vector<Tensor>& feats) {
    std::vector<Tensor> levels = decoder_run(seg_dec_, feats);
    return softmax(seg_head_(levels[0]), 1);
}

std::vector<Tensor> MultiTaskModel::depth_sigmoids(const std::vector<Tensor>& feats) {
    std::vector<Tensor> levels = decoder_run(depth_dec_, feats);
    std::vector<Tensor> sig;
    for (int s = 0; s < cfg_.scales; ++s)
        sig.push_back(sigmoid(disp_heads_[static_cast<size_t>(s)](levels[static_cast<size_t>(s)])));
    return sig;
}

Tensor MultiTaskModel::forward_seg(const Tensor& x) { return seg_probs(encode(x)); }

std::vector<Tensor> MultiTaskModel::forward_depth(const Tensor& x) {
    return depth_sigmoids(encode(x));
}

Tensor MultiTaskModel::forward_pose(const Tensor& target, const Tensor& other) {
    if (target.shape() != other.shape())
        throw DimensionError("forward_pose: frame shapes differ");
    Tensor x = concat({target, other}, 1);
    for (size_t i = 0; i + 1 < pose_convs_.size(); ++i) x = relu(pose_convs_[i](x));
    x = pose_convs_.back()(x);           // {N,6,h,w}
    x = mean_axis(mean_axis(x, 3), 2);   // {N,6}
    return mul_scalar(x, 0.01);
}

Pose MultiTaskModel::pose_row(const Tensor& pose_batch, int n) {
    Tensor row = reshape(slice(pose_batch, 0, n, 1), {6});
    return Pose{slice(row, 0, 0, 3), slice(row, 0, 3, 3)};
}

std::vector<std::pair<std::string, BatchNormState*>> MultiTaskModel::bn_states() {
    return bn_registry_;
}

namespace {

std::string widths_str(const std::vector<int>& w) {
    std::string s;
    for (size_t i = 0; i < w.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(w[i]);
    }
    return s;
}

std::vector<int> parse_widths(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

}  // namespace

void MultiTaskModel::save_checkpoint(const std::string& path,
                                     const std::vector<NamedParam>& extra) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);

    std::vector<NamedParam> records;
    for (const auto& p : params_) records.push_back(p);
    for (const auto& [name, state] : bn_registry_) {
        const int c = static_cast<int>(state->running_mean.size());
        records.push_back({name + ".running_mean", Tensor::from_data({c}, state->running_mean)});
        records.push_back({name + ".running_var", Tensor::from_data({c}, state->running_var)});
    }
    for (const auto& p : extra) records.push_back(p);

    f << "RMTLCKPT 1\n";
    f << "config in_channels=" << cfg_.in_channels << " classes=" << cfg_.classes
      << " scales=" << cfg_.scales << " pose_width=" << cfg_.pose_width
      << " widths=" << widths_str(cfg_.encoder_widths) << "\n";
    f << "tensors " << records.size() << "\n";
    for (const auto& r : records) {
        f << r.name << " " << r.tensor.ndim();
        for (int i = 0; i < r.tensor.ndim(); ++i) f << ' ' << r.tensor.dim(i);
        f << '\n';
    }
    for (const auto& r : records) write_tnsr(f, r.tensor);
    if (!f) throw IoError("write failed: " + path);
}

MultiTaskModel MultiTaskModel::load_checkpoint(const std::string& path,
                                               std::vector<NamedParam>* extra) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "RMTLCKPT 1")
        throw IoError("not a checkpoint file: " + path);
    if (!std::getline(f, line) || line.rfind("config ", 0) != 0)
        throw IoError("checkpoint missing config line: " + path);

    NetworkConfig cfg;
    {
        std::stringstream ss(line.substr(7));
        std::string kv;
        while (ss >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw IoError("bad config entry '" + kv + "' in " + path);
            const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
            if (k == "in_channels") cfg.in_channels = std::stoi(v);
            else if (k == "classes") cfg.classes = std::stoi(v);
            else if (k == "scales") cfg.scales = std::stoi(v);
            else if (k == "pose_width") cfg.pose_width = std::stoi(v);
            else if (k == "widths") cfg.encoder_widths = parse_widths(v);
            else throw IoError("unknown config key '" + k + "' in " + path);
        }
    }

    if (!std::getline(f, line) || line.rfind("tensors ", 0) != 0)
        throw IoError("checkpoint missing tensor count: " + path);
    const size_t count = std::stoul(line.substr(8));
    std::vector<std::string> names(count);
    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(f, line)) throw IoError("truncated manifest in " + path);
        std::stringstream ss(line);
        ss >> names[i];
    }

    MultiTaskModel model(cfg, 0);
    std::vector<NamedParam> extras;
    for (size_t i = 0; i < count; ++i) {
        Tensor t = read_tnsr(f, path);
        bool used = false;
        for (auto& p : model.params_) {
            if (p.name == names[i]) {
                if (p.tensor.shape() != t.shape())
                    throw IoError("checkpoint shape mismatch for " + names[i] + " in " + path);
                std::copy(t.data().begin(), t.data().end(), p.tensor.data().begin());
                used = true;
                break;
            }
        }
        if (!used) {
            for (auto& [name, state] : model.bn_registry_) {
                if (names[i] == name + ".running_mean") {
                    state->running_mean.assign(t.data().begin(), t.data().end());
                    used = true;
                } else if (names[i] == name + ".running_var") {
                    state->running_var.assign(t.data().begin(), t.data().end());
                    used = true;
                }
                if (used) break;
            }
        }
        if (!used) extras.push_back({names[i], t});
    }
    if (extra) *extra = std::move(extras);
    return model;
}

}  // namespace rmtl
