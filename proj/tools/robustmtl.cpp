// Operator entry point: gen-data, train, attack-sweep, evaluate, report.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "robustmtl/evaluation.hpp"
#include "robustmtl/parallel.hpp"
#include "robustmtl/serialize.hpp"
#include "robustmtl/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rmtl;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t env_seed_fallback() {
    const char* v = std::getenv("ROBUST_MTL_SEED");
    return v ? std::strtoull(v, nullptr, 10) : 0;
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    if (out.empty()) throw ConfigError("empty strength grid");
    return out;
}

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const std::string& dir, const std::string& subcommand, const json& resolved,
                    const json& input_hashes, const std::vector<std::string>& outputs) {
    json m;
    m["tool"] = "robustmtl";
    m["version"] = kVersion;
    m["subcommand"] = subcommand;
    m["timestamp_utc"] = timestamp_utc();
    m["resolved_config"] = resolved;
    m["input_hashes"] = input_hashes;
    m["outputs"] = outputs;
    fs::create_directories(dir);
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw IoError("cannot open for writing: " + dir + "/manifest.json");
    f << m.dump(2) << "\n";
}

std::string hash_str(const std::string& path) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash_file(path)));
    return buf;
}

ClassWeights weights_from_extras(const std::vector<NamedParam>& extras, int classes) {
    for (const auto& e : extras) {
        if (e.name == "class_weights") {
            ClassWeights w;
            w.w.assign(e.tensor.data().begin(), e.tensor.data().end());
            return w;
        }
    }
    ClassWeights w;
    w.w.assign(static_cast<size_t>(classes), 1.0);
    return w;
}

struct GenArgs {
    std::uint64_t seed = 0;
    bool seed_set = false;
    int count = 12;
    std::string out;
    int width = 128, height = 96;
    int min_objects = 2, max_objects = 5;
    double texture_freq = 1.0;
    double train_frac = 0.7, val_frac = 0.15;
};

int cmd_gen_data(const GenArgs& a) {
    GenOptions opt;
    opt.seed = a.seed_set ? a.seed : env_seed_fallback();
    opt.count = a.count;
    opt.scene.width = a.width;
    opt.scene.height = a.height;
    opt.scene.min_objects = a.min_objects;
    opt.scene.max_objects = a.max_objects;
    opt.scene.texture_freq = a.texture_freq;
    opt.train_frac = a.train_frac;
    opt.val_frac = a.val_frac;
    generate_dataset(opt, a.out);
    json resolved{{"seed", opt.seed},       {"count", opt.count},
                  {"width", a.width},       {"height", a.height},
                  {"min_objects", a.min_objects}, {"max_objects", a.max_objects},
                  {"texture_freq", a.texture_freq}, {"train_frac", a.train_frac},
                  {"val_frac", a.val_frac}};
    write_manifest(a.out, "gen-data", resolved, json::object(), {"index.csv"});
    std::printf("wrote %d triplets to %s\n", opt.count, a.out.c_str());
    return 0;
}

struct TrainArgs {
    std::string data, out, config_path;
    TrainConfig cfg;
    bool seed_set = false;
    std::string widths = "16,32,64,128";
    bool single_task = false, depth_only = false;
    int jobs = 1;
};

int cmd_train(TrainArgs& a) {
    if (!a.seed_set) a.cfg.seed = env_seed_fallback();
    if (a.single_task && a.depth_only) throw ConfigError("--single-task conflicts with --depth-only");
    a.cfg.seg_enabled = !a.depth_only;
    a.cfg.depth_enabled = !a.single_task;
    {
        std::vector<int> w;
        std::stringstream ss(a.widths);
        std::string item;
        while (std::getline(ss, item, ',')) w.push_back(std::stoi(item));
        if (w.empty()) throw ConfigError("empty --widths");
        a.cfg.net.encoder_widths = w;
    }
    set_num_threads(a.jobs);

    const DatasetIndex data = load_dataset(a.data);
    Trainer trainer(a.cfg, data);
    fs::create_directories(a.out);
    std::ofstream log(a.out + "/train_log.csv");
    if (!log) throw IoError("cannot open for writing: " + a.out + "/train_log.csv");
    trainer.run(&log);
    trainer.save_checkpoint(a.out + "/checkpoint.ckpt");

    json resolved{{"data", a.data},
                  {"lambda", a.cfg.lambda},
                  {"lr", a.cfg.lr},
                  {"lr_decayed", a.cfg.lr_decayed},
                  {"epochs", a.cfg.epochs},
                  {"decay_epoch", a.cfg.resolved_decay_epoch()},
                  {"batch_seg", a.cfg.batch_seg},
                  {"batch_depth", a.cfg.batch_depth},
                  {"seed", a.cfg.seed},
                  {"flip", a.cfg.flip},
                  {"jitter", a.cfg.jitter},
                  {"seg_enabled", a.cfg.seg_enabled},
                  {"depth_enabled", a.cfg.depth_enabled},
                  {"widths", a.widths},
                  {"classes", a.cfg.net.classes},
                  {"scales", a.cfg.net.scales},
                  {"jobs", a.jobs}};
    json hashes{{"dataset_index", hash_str(a.data + "/index.csv")}};
    if (!a.config_path.empty()) hashes["config_file"] = hash_str(a.config_path);
    write_manifest(a.out, "train", resolved, hashes, {"checkpoint.ckpt", "train_log.csv"});
    std::printf("checkpoint written to %s/checkpoint.ckpt\n", a.out.c_str());
    return 0;
}

struct SweepArgs {
    std::string family = "gaussian";
    std::string checkpoint, data, out, config_path;
    std::string eps_grid, f_grid;
    std::string split = "test";
    std::string labels = "truth";
    int pgd_iters = 10;
    double pgd_step_frac = 0.25;
    bool clip = false;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
};

int cmd_attack_sweep(const SweepArgs& a) {
    std::vector<NamedParam> extras;
    MultiTaskModel model = MultiTaskModel::load_checkpoint(a.checkpoint, &extras);
    const ClassWeights w = weights_from_extras(extras, model.config().classes);
    const DatasetIndex data = load_dataset(a.data);

    SweepOptions opt;
    opt.base.family = perturb_family_from_string(a.family);
    opt.base.pgd_iters = a.pgd_iters;
    opt.base.pgd_step_frac = a.pgd_step_frac;
    opt.base.clip = a.clip;
    opt.base.predicted_labels = a.labels == "predicted";
    if (a.labels != "truth" && a.labels != "predicted")
        throw ConfigError("--labels must be 'truth' or 'predicted'");
    opt.base.seed = a.seed_set ? a.seed : env_seed_fallback();
    opt.split = a.split;
    opt.jobs = a.jobs;
    if (opt.base.family == PerturbFamily::kSaltPepper) {
        if (!a.f_grid.empty()) opt.grid = parse_grid(a.f_grid);
    } else if (!a.eps_grid.empty()) {
        opt.grid = parse_grid(a.eps_grid);
    }

    const SweepResult res = run_sweep(model, w, data, opt);
    write_sweep_csv(res, a.out);

    const std::string out_dir = fs::path(a.out).has_parent_path()
                                    ? fs::path(a.out).parent_path().string()
                                    : std::string(".");
    json resolved{{"family", a.family},
                  {"checkpoint", a.checkpoint},
                  {"data", a.data},
                  {"split", a.split},
                  {"labels", a.labels},
                  {"pgd_iters", a.pgd_iters},
                  {"pgd_step_frac", a.pgd_step_frac},
                  {"clip", a.clip},
                  {"seed", opt.base.seed},
                  {"jobs", a.jobs},
                  {"grid", opt.grid.empty() ? json("default") : json(opt.grid)}};
    json hashes{{"checkpoint", hash_str(a.checkpoint)},
                {"dataset_index", hash_str(a.data + "/index.csv")}};
    if (!a.config_path.empty()) hashes["config_file"] = hash_str(a.config_path);
    write_manifest(out_dir, "attack-sweep", resolved, hashes,
                   {fs::path(a.out).filename().string()});
    std::printf("sweep written to %s\n", a.out.c_str());
    return 0;
}

struct EvalArgs {
    std::string checkpoint, data, split = "test", out;
    int jobs = 1;
};

int cmd_evaluate(const EvalArgs& a) {
    std::vector<NamedParam> extras;
    MultiTaskModel model = MultiTaskModel::load_checkpoint(a.checkpoint, &extras);
    const DatasetIndex data = load_dataset(a.data);
    const double m = evaluate_miou(model, data, a.split, a.jobs);
    std::printf("miou %.9g\n", m);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw IoError("cannot open for writing: " + a.out);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "split,miou\n%s,%.9g\n", a.split.c_str(), m);
        f << buf;
        const std::string out_dir = fs::path(a.out).has_parent_path()
                                        ? fs::path(a.out).parent_path().string()
                                        : std::string(".");
        json resolved{{"checkpoint", a.checkpoint}, {"data", a.data}, {"split", a.split}};
        json hashes{{"checkpoint", hash_str(a.checkpoint)},
                    {"dataset_index", hash_str(a.data + "/index.csv")}};
        write_manifest(out_dir, "evaluate", resolved, hashes,
                       {fs::path(a.out).filename().string()});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task segmentation/depth training and robustness evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenArgs gen;
    auto* sc_gen = app.add_subcommand("gen-data", "render a synthetic triplet dataset");
    sc_gen->set_config("--config");
    sc_gen->add_option("--seed", gen.seed)->each([&](const std::string&) { gen.seed_set = true; });
    sc_gen->add_option("--count", gen.count, "number of triplets");
    sc_gen->add_option("--out", gen.out)->required();
    sc_gen->add_option("--width", gen.width);
    sc_gen->add_option("--height", gen.height);
    sc_gen->add_option("--min-objects", gen.min_objects);
    sc_gen->add_option("--max-objects", gen.max_objects);
    sc_gen->add_option("--texture-freq", gen.texture_freq);
    sc_gen->add_option("--train-frac", gen.train_frac);
    sc_gen->add_option("--val-frac", gen.val_frac);

    TrainArgs train;
    auto* sc_train = app.add_subcommand("train", "optimize the multi-task model");
    sc_train->set_config("--config");
    sc_train->add_option("--data", train.data)->required();
    sc_train->add_option("--out", train.out)->required();
    sc_train->add_option("--lambda", train.cfg.lambda, "inter-task gradient scaling factor");
    sc_train->add_option("--lr", train.cfg.lr);
    sc_train->add_option("--lr-decayed", train.cfg.lr_decayed);
    sc_train->add_option("--epochs", train.cfg.epochs);
    sc_train->add_option("--decay-epoch", train.cfg.decay_epoch);
    sc_train->add_option("--batch-seg", train.cfg.batch_seg);
    sc_train->add_option("--batch-depth", train.cfg.batch_depth);
    sc_train->add_option("--seed", train.cfg.seed)->each([&](const std::string&) {
        train.seed_set = true;
    });
    sc_train->add_flag("--flip,!--no-flip", train.cfg.flip, "horizontal flip augmentation");
    sc_train->add_flag("--jitter,!--no-jitter", train.cfg.jitter,
                       "brightness/contrast jitter (+-0.2)");
    sc_train->add_flag("--single-task", train.single_task, "segmentation only");
    sc_train->add_flag("--depth-only", train.depth_only, "depth only (lambda ignored)");
    sc_train->add_option("--widths", train.widths, "encoder channel widths");
    sc_train->add_option("--classes", train.cfg.net.classes);
    sc_train->add_option("--scales", train.cfg.net.scales);
    sc_train->add_option("--jobs", train.jobs);

    SweepArgs sweep;
    auto* sc_sweep = app.add_subcommand("attack-sweep", "perturbation sweep over a trained model");
    sc_sweep->set_config("--config");
    sc_sweep->add_option("--family", sweep.family, "gaussian|salt_pepper|fgsm|pgd")->required();
    sc_sweep->add_option("--checkpoint", sweep.checkpoint)->required();
    sc_sweep->add_option("--data", sweep.data)->required();
    sc_sweep->add_option("--out", sweep.out)->required();
    sc_sweep->add_option("--eps-grid", sweep.eps_grid, "comma list, default 0.25,0.5,1,2,4,8,16");
    sc_sweep->add_option("--f-grid", sweep.f_grid, "salt_pepper pixel fractions");
    sc_sweep->add_option("--split", sweep.split);
    sc_sweep->add_option("--labels", sweep.labels, "truth|predicted");
    sc_sweep->add_option("--pgd-iters", sweep.pgd_iters);
    sc_sweep->add_option("--pgd-step-frac", sweep.pgd_step_frac);
    sc_sweep->add_flag("--clip", sweep.clip, "clip perturbed images to [0,255]");
    sc_sweep->add_option("--seed", sweep.seed)->each([&](const std::string&) {
        sweep.seed_set = true;
    });
    sc_sweep->add_option("--jobs", sweep.jobs);

    EvalArgs eval;
    auto* sc_eval = app.add_subcommand("evaluate", "clean mIoU of a checkpoint on a split");
    sc_eval->add_option("--checkpoint", eval.checkpoint)->required();
    sc_eval->add_option("--data", eval.data)->required();
    sc_eval->add_option("--split", eval.split);
    sc_eval->add_option("--out", eval.out);
    sc_eval->add_option("--jobs", eval.jobs);

    std::vector<std::string> report_csvs;
    std::string report_out;
    auto* sc_report = app.add_subcommand("report", "render sweep CSVs into an SVG plot");
    sc_report->add_option("csvs", report_csvs, "sweep CSV files")->required();
    sc_report->add_option("--out", report_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run with --help for usage\n";
        return 2;
    }

    try {
        if (*sc_gen) return cmd_gen_data(gen);
        if (*sc_train) {
            train.config_path = sc_train->get_config_ptr() ? sc_train->get_config_ptr()->as<std::string>() : "";
            return cmd_train(train);
        }
        if (*sc_sweep) {
            sweep.config_path = sc_sweep->get_config_ptr() ? sc_sweep->get_config_ptr()->as<std::string>() : "";
            return cmd_attack_sweep(sweep);
        }
        if (*sc_eval) return cmd_evaluate(eval);
        if (*sc_report) {
            write_report_svg(report_csvs, report_out);
            std::printf("report written to %s\n", report_out.c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
