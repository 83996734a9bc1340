// Command-line front end: phantom dataset generation, class-weight
// inspection, training, tiled prediction, evaluation, and the full
// weighting-scheme x learning-rate experiment grid.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxseg/dataset.hpp"
#include "voxseg/dice.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/trainer.hpp"
#include "voxseg/unet3d.hpp"
#include "voxseg/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> default_class_names(int num_classes) {
    std::vector<std::string> names;
    for (int l = 0; l < num_classes; ++l)
        names.push_back("class_" + std::to_string(l));
    return names;
}

std::string format_lr(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lr);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
    if (!f)
        throw std::runtime_error("short write to " + path.string());
}

json weights_to_json(const voxseg::ClassCounts& counts, const voxseg::ClassWeights& weights) {
    json j;
    j["scheme"] = voxseg::to_string(weights.scheme);
    j["epsilon"] = weights.epsilon;
    j["num_classes"] = counts.per_class.size();
    j["total_voxels"] = counts.total;
    j["counts"] = counts.per_class;
    j["weights"] = weights.w;
    return j;
}

voxseg::ClassCounts dataset_counts(const voxseg::Dataset& set, int num_classes) {
    voxseg::ClassCounts counts;
    counts.per_class.assign(std::size_t(num_classes), 0);
    for (const voxseg::Patient& p : set) {
        if (p.labels.num_classes != num_classes)
            throw std::runtime_error("dataset labels disagree on class count");
        for (std::uint8_t l : p.labels.labels)
            ++counts.per_class[l];
        counts.total += p.labels.labels.size();
    }
    return counts;
}

// Shared flag block for anything that trains a network.
struct TrainFlags {
    std::string data_dir;
    double lr = 0.001;
    int iterations = 500;
    int batch_size = 3;
    int patch = 32;
    int levels = 2;
    int base_channels = 8;
    std::uint64_t seed = 1234;
    int val_interval = 25;
    int checkpoint_every = 0;
    bool allow_patient_reuse = false;
    double epsilon = 1.0;

    void add_common(CLI::App& cmd) {
        cmd.add_option("--data", data_dir, "dataset directory (from phantom-gen)")->required();
        cmd.add_option("--lr", lr, "learning rate");
        cmd.add_option("--iterations", iterations, "training iterations");
        cmd.add_option("--batch-size", batch_size, "subvolumes per batch");
        cmd.add_option("--patch", patch, "cubic patch edge length");
        cmd.add_option("--levels", levels, "encoder depth");
        cmd.add_option("--base-channels", base_channels, "channels at full resolution");
        cmd.add_option("--seed", seed, "base seed; all randomness derives from it");
        cmd.add_option("--val-interval", val_interval, "iterations between curve points");
        cmd.add_option("--checkpoint-every", checkpoint_every,
                       "write periodic checkpoints every N iterations (0 = off)");
        cmd.add_flag("--allow-patient-reuse", allow_patient_reuse,
                     "permit repeated patients inside one batch");
        cmd.add_option("--epsilon", epsilon, "epsilon in the weight formulas");
    }

    voxseg::UNetConfig net_config(int num_classes) const {
        voxseg::UNetConfig cfg;
        cfg.in_channels = 1;
        cfg.num_classes = num_classes;
        cfg.levels = levels;
        cfg.base_channels = base_channels;
        cfg.patch = voxseg::cube(std::uint32_t(patch));
        cfg.validate();
        return cfg;
    }

    voxseg::TrainConfig train_config(voxseg::WeightScheme scheme, std::uint64_t run_seed) const {
        voxseg::TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.iterations = iterations;
        cfg.batch_size = batch_size;
        cfg.scheme = scheme;
        cfg.seed = run_seed;
        cfg.validation_interval = val_interval;
        cfg.allow_patient_reuse = allow_patient_reuse;
        cfg.checkpoint_every = checkpoint_every;
        cfg.weight_epsilon = epsilon;
        return cfg;
    }
};

int cmd_phantom_gen(const fs::path& out_dir, int patients, int shape, int classes, double sigma,
                    std::uint64_t seed, double train_fraction, int downsample_factor) {
    voxseg::PhantomSpec spec =
        voxseg::PhantomSpec::standard(voxseg::cube(std::uint32_t(shape)), classes, sigma, seed);
    voxseg::LoadedDataset data = voxseg::generate_dataset(spec, patients, train_fraction);
    if (downsample_factor > 1) {
        auto shrink = [&](voxseg::Dataset& set) {
            for (voxseg::Patient& p : set) {
                p.image = voxseg::downsample(p.image, downsample_factor);
                p.labels = voxseg::downsample(p.labels, downsample_factor);
            }
        };
        shrink(data.train);
        shrink(data.test);
    }
    voxseg::save_dataset(out_dir, data.train, data.test);
    std::cout << "wrote " << data.train.size() << " train + " << data.test.size()
              << " test patients to " << out_dir.string() << "\n";
    return 0;
}

int cmd_weights(const std::string& data_dir, const std::string& scheme_name, double epsilon,
                const std::string& out_file) {
    voxseg::LoadedDataset data = voxseg::load_dataset(data_dir);
    if (data.train.empty())
        throw std::runtime_error("dataset has no training split");
    const int L = data.train.front().labels.num_classes;
    voxseg::ClassCounts counts = dataset_counts(data.train, L);
    voxseg::ClassWeights weights =
        voxseg::class_weights(counts, voxseg::parse_weight_scheme(scheme_name), epsilon);
    const std::string text = weights_to_json(counts, weights).dump(2) + "\n";
    if (out_file.empty())
        std::cout << text;
    else
        write_text(out_file, text);
    return 0;
}

struct RunArtifacts {
    voxseg::TrainResult result;
    int num_classes = 0;
};

RunArtifacts run_training(const voxseg::LoadedDataset& data, const TrainFlags& flags,
                          voxseg::WeightScheme scheme, std::uint64_t run_seed,
                          const fs::path& curve_path, const fs::path& model_path,
                          const fs::path& checkpoint_dir) {
    if (data.train.empty())
        throw std::runtime_error("dataset has no training split");
    const int L = data.train.front().labels.num_classes;
    voxseg::UNetConfig net_cfg = flags.net_config(L);
    voxseg::TrainConfig train_cfg = flags.train_config(scheme, run_seed);
    train_cfg.checkpoint_dir = checkpoint_dir;

    RunArtifacts arts;
    arts.num_classes = L;
    arts.result = voxseg::train(data.train, data.test, net_cfg, train_cfg);
    write_text(curve_path, voxseg::curve_to_csv(arts.result.curve, L));
    if (!arts.result.diverged && !model_path.empty())
        voxseg::save_params(arts.result.params, model_path);
    return arts;
}

// Mean per-class hard DSC of full-volume predictions over a held-out split.
voxseg::DiceReport evaluate_on_split(const voxseg::UNetParams<float>& params,
                                     const voxseg::Dataset& split) {
    if (split.empty())
        throw std::runtime_error("no held-out patients to evaluate");
    const int L = params.config.num_classes;
    std::vector<double> mean(std::size_t(L), 0.0);
    for (const voxseg::Patient& p : split) {
        voxseg::ProbabilityMap probs = voxseg::predict_volume(params, p.image);
        voxseg::LabelVolume pred = voxseg::argmax_labels(probs);
        voxseg::DiceReport r = voxseg::dice_report(pred, p.labels, default_class_names(L));
        for (int l = 0; l < L; ++l)
            mean[std::size_t(l)] += r.per_class[std::size_t(l)];
    }
    for (double& v : mean)
        v /= double(split.size());
    return voxseg::DiceReport::from_per_class(default_class_names(L), std::move(mean));
}

int cmd_train(const TrainFlags& flags, const std::string& scheme_name, const fs::path& out_dir) {
    voxseg::LoadedDataset data = voxseg::load_dataset(flags.data_dir);
    fs::create_directories(out_dir);
    const voxseg::WeightScheme scheme = voxseg::parse_weight_scheme(scheme_name);
    fs::path checkpoint_dir = flags.checkpoint_every > 0 ? out_dir / "checkpoints" : fs::path();
    RunArtifacts arts = run_training(data, flags, scheme, flags.seed, out_dir / "curve.csv",
                                     out_dir / "model.vnet", checkpoint_dir);
    const int L = arts.num_classes;
    voxseg::ClassCounts counts = dataset_counts(data.train, L);
    write_text(out_dir / "weights.json",
               weights_to_json(counts, arts.result.weights).dump(2) + "\n");
    if (arts.result.diverged) {
        std::cerr << "training diverged: " << arts.result.divergence_reason << "\n";
        return 2;
    }
    std::cout << "trained " << flags.iterations << " iterations; model and curve written to "
              << out_dir.string() << "\n";
    return 0;
}

int cmd_predict(const std::string& model_file, const std::string& input_file,
                const fs::path& out_dir, int stride) {
    voxseg::UNetParams<float> params = voxseg::load_params(model_file);
    voxseg::ScalarVolume image = voxseg::read_scalar_volume(input_file);
    fs::create_directories(out_dir);
    voxseg::ProbabilityMap probs;
    if (stride > 0) {
        voxseg::TilingPlan plan = voxseg::plan_tiles(image.shape, params.config.patch,
                                                     voxseg::cube(std::uint32_t(stride)));
        probs = voxseg::predict_volume(params, image, plan);
    } else {
        probs = voxseg::predict_volume(params, image);
    }
    voxseg::LabelVolume labels = voxseg::argmax_labels(probs);
    voxseg::write_volume(probs, out_dir / "probabilities.vvol");
    voxseg::write_volume(labels, out_dir / "labels.vvol");
    std::cout << "wrote probabilities.vvol and labels.vvol to " << out_dir.string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred_file, const std::string& truth_file,
                 const std::string& out_file, const std::string& label) {
    voxseg::LabelVolume pred = voxseg::read_label_volume(pred_file);
    voxseg::LabelVolume truth = voxseg::read_label_volume(truth_file);
    voxseg::DiceReport report =
        voxseg::dice_report(pred, truth, default_class_names(truth.num_classes));
    voxseg::DiceReportTable table(default_class_names(truth.num_classes));
    table.add(label, report);
    const std::string csv = table.to_csv();
    if (out_file.empty())
        std::cout << csv;
    else
        write_text(out_file, csv);
    return 0;
}

int cmd_grid(const TrainFlags& flags, const std::vector<std::string>& scheme_names,
             const std::vector<double>& lrs, const fs::path& out_dir, int parallel) {
    if (scheme_names.empty() || lrs.empty())
        throw std::runtime_error("grid needs at least one scheme and one learning rate");
    voxseg::LoadedDataset data = voxseg::load_dataset(flags.data_dir);
    if (data.test.empty())
        throw std::runtime_error("grid evaluation needs a test split");
    fs::create_directories(out_dir);
    const int L = data.train.empty() ? 0 : data.train.front().labels.num_classes;
    if (L < 2)
        throw std::runtime_error("dataset has no usable training split");

    struct Run {
        voxseg::WeightScheme scheme;
        double lr = 0.0;
        std::uint64_t seed = 0;
        std::string label;
    };
    std::vector<Run> runs;
    for (std::size_t si = 0; si < scheme_names.size(); ++si) {
        const voxseg::WeightScheme scheme = voxseg::parse_weight_scheme(scheme_names[si]);
        const char* short_name = scheme == voxseg::WeightScheme::Uniform  ? "u"
                                 : scheme == voxseg::WeightScheme::Simple ? "s"
                                                                          : "q";
        for (std::size_t li = 0; li < lrs.size(); ++li) {
            Run r;
            r.scheme = scheme;
            r.lr = lrs[li];
            // One documented derivation: run index salts the base seed.
            r.seed = voxseg::derive_seed(flags.seed, std::uint64_t(si) * 100 + li);
            r.label = std::string("W_") + short_name + "_mu" + format_lr(lrs[li]);
            runs.push_back(std::move(r));
        }
    }

    struct Outcome {
        bool diverged = false;
        std::string reason;
        voxseg::DiceReport report;
    };
    std::vector<Outcome> outcomes(runs.size());

    auto do_run = [&](std::size_t i) {
        const Run& run = runs[i];
        TrainFlags run_flags = flags;
        run_flags.lr = run.lr;
        RunArtifacts arts =
            run_training(data, run_flags, run.scheme, run.seed, out_dir / ("curve_" + run.label + ".csv"),
                         out_dir / ("model_" + run.label + ".vnet"), fs::path());
        if (arts.result.diverged) {
            outcomes[i].diverged = true;
            outcomes[i].reason = arts.result.divergence_reason;
            return;
        }
        outcomes[i].report = evaluate_on_split(arts.result.params, data.test);
    };

    if (parallel <= 1) {
        for (std::size_t i = 0; i < runs.size(); ++i)
            do_run(i);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= runs.size())
                    return;
                do_run(i);
            }
        };
        std::vector<std::thread> pool;
        const std::size_t threads = std::min<std::size_t>(std::size_t(parallel), runs.size());
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }

    voxseg::DiceReportTable table(default_class_names(L));
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (outcomes[i].diverged) {
            table.add_diverged(runs[i].label);
            std::cerr << "run " << runs[i].label << " diverged: " << outcomes[i].reason << "\n";
        } else {
            table.add(runs[i].label, outcomes[i].report);
        }
    }
    write_text(out_dir / "report.csv", table.to_csv());
    std::cout << "grid complete: " << runs.size() << " runs, report.csv written to "
              << out_dir.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"volumetric multi-organ segmentation workbench"};
    app.require_subcommand(1);

    // phantom-gen
    auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic ellipsoid dataset");
    std::string gen_out;
    int gen_patients = 20, gen_shape = 48, gen_classes = 8, gen_downsample = 1;
    double gen_sigma = 0.02, gen_fraction = 0.8;
    std::uint64_t gen_seed = 1234;
    gen->add_option("--out-dir", gen_out, "output directory")->required();
    gen->add_option("--patients", gen_patients, "number of patients");
    gen->add_option("--shape", gen_shape, "cubic volume edge length");
    gen->add_option("--classes", gen_classes, "classes including background (2-9)");
    gen->add_option("--sigma", gen_sigma, "intensity noise standard deviation");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--train-fraction", gen_fraction, "fraction of patients in the train split");
    gen->add_option("--downsample", gen_downsample,
                    "block-downsample factor applied before saving (1 = off)");

    // weights
    auto* wts = app.add_subcommand("weights", "print class-balancing weights for a dataset");
    std::string wts_data, wts_scheme = "uniform", wts_out;
    double wts_epsilon = 1.0;
    wts->add_option("--data", wts_data, "dataset directory")->required();
    wts->add_option("--scheme", wts_scheme, "uniform, simple or square");
    wts->add_option("--epsilon", wts_epsilon, "epsilon in the weight formulas");
    wts->add_option("--out", wts_out, "write JSON here instead of stdout");

    // train
    auto* trn = app.add_subcommand("train", "train a network on a dataset");
    TrainFlags trn_flags;
    std::string trn_scheme = "uniform", trn_out;
    trn_flags.add_common(*trn);
    trn->add_option("--scheme", trn_scheme, "weighting scheme: uniform, simple or square");
    trn->add_option("--out-dir", trn_out, "output directory")->required();

    // predict
    auto* prd = app.add_subcommand("predict", "tile a full volume through a trained model");
    std::string prd_model, prd_input, prd_out;
    int prd_stride = 0;
    prd->add_option("--model", prd_model, "checkpoint file")->required();
    prd->add_option("--input", prd_input, "scalar VVOL volume")->required();
    prd->add_option("--out-dir", prd_out, "output directory")->required();
    prd->add_option("--stride", prd_stride, "cubic tile stride (default: half patch)");

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "per-class Dice report for two label volumes");
    std::string evl_pred, evl_truth, evl_out, evl_label = "run";
    evl->add_option("--pred", evl_pred, "predicted label VVOL")->required();
    evl->add_option("--truth", evl_truth, "reference label VVOL")->required();
    evl->add_option("--out", evl_out, "write CSV here instead of stdout");
    evl->add_option("--label", evl_label, "column label in the report");

    // grid
    auto* grd = app.add_subcommand("grid", "weighting-scheme x learning-rate experiment grid");
    TrainFlags grd_flags;
    std::vector<std::string> grd_schemes{"uniform", "simple", "square"};
    std::vector<double> grd_lrs{0.001, 0.01};
    std::string grd_out;
    int grd_parallel = 1;
    grd_flags.add_common(*grd);
    grd->add_option("--schemes", grd_schemes, "weighting schemes to sweep")->delimiter(',');
    grd->add_option("--lrs", grd_lrs, "learning rates to sweep")->delimiter(',');
    grd->add_option("--out-dir", grd_out, "output directory")->required();
    grd->add_option("--parallel", grd_parallel, "max concurrent runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed())
            return cmd_phantom_gen(gen_out, gen_patients, gen_shape, gen_classes, gen_sigma,
                                   gen_seed, gen_fraction, gen_downsample);
        if (wts->parsed())
            return cmd_weights(wts_data, wts_scheme, wts_epsilon, wts_out);
        if (trn->parsed())
            return cmd_train(trn_flags, trn_scheme, trn_out);
        if (prd->parsed())
            return cmd_predict(prd_model, prd_input, prd_out, prd_stride);
        if (evl->parsed())
            return cmd_evaluate(evl_pred, evl_truth, evl_out, evl_label);
        if (grd->parsed())
            return cmd_grid(grd_flags, grd_schemes, grd_lrs, grd_out, grd_parallel);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
