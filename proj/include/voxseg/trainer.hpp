#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxseg/dataset.hpp"
#include "voxseg/dice.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/unet3d.hpp"

// Adam, random-subvolume batch sampling and the training loop. All
// randomness inside train() flows from TrainConfig::seed through three
// independent streams (see the salt constants), so a run is reproducible and
// tests can replay the exact batches.

namespace voxseg {

inline constexpr std::uint64_t kSaltInit = 0x696e69742d706172ull;
inline constexpr std::uint64_t kSaltSample = 0x62617463682d726eull;
inline constexpr std::uint64_t kSaltValidation = 0x76616c2d70617463ull;

// Held-out patches scored per curve point.
inline constexpr int kValidationPatches = 4;

struct TrainConfig {
    double learning_rate = 0.001;
    int iterations = 500;
    int batch_size = 3;
    WeightScheme scheme = WeightScheme::Uniform;
    std::uint64_t seed = 0;
    int validation_interval = 25;
    bool allow_patient_reuse = false;
    int checkpoint_every = 0; // 0 = no periodic checkpoints
    std::filesystem::path checkpoint_dir;
    double weight_epsilon = 1.0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw std::invalid_argument("TrainConfig: learning_rate must be positive");
        if (iterations < 1)
            throw std::invalid_argument("TrainConfig: iterations must be >= 1");
        if (batch_size < 1)
            throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (validation_interval < 1)
            throw std::invalid_argument("TrainConfig: validation_interval must be >= 1");
        if (checkpoint_every < 0)
            throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
        if (!(weight_epsilon > 0.0))
            throw std::invalid_argument("TrainConfig: weight_epsilon must be positive");
    }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename Scalar>
struct AdamState {
    UNetParams<Scalar> m;
    UNetParams<Scalar> v;
    std::int64_t t = 0;

    static AdamState init(const UNetConfig& cfg) {
        AdamState s;
        s.m = UNetParams<Scalar>::zeros(cfg);
        s.v = UNetParams<Scalar>::zeros(cfg);
        return s;
    }
};

// One Adam update over a flat parameter array. t is the post-increment step
// count (1 on the first call). mu = 0 leaves theta untouched.
template <typename Scalar>
void adam_update_span(std::span<Scalar> theta, std::span<const Scalar> grad,
                      std::span<Scalar> m, std::span<Scalar> v, std::int64_t t, double mu,
                      const std::string& name) {
    if (theta.size() != grad.size() || theta.size() != m.size() || theta.size() != v.size())
        throw std::invalid_argument("adam_update_span: size mismatch for " + name);
    if (t < 1)
        throw std::invalid_argument("adam_update_span: step count must be >= 1");
    const double bc1 = 1.0 - std::pow(kAdamBeta1, double(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, double(t));
    for (std::size_t j = 0; j < theta.size(); ++j) {
        const double g = double(grad[j]);
        if (!std::isfinite(g))
            throw std::runtime_error("adam_update_span: non-finite gradient at " + name + "[" +
                                     std::to_string(j) + "]");
        const double mj = kAdamBeta1 * double(m[j]) + (1.0 - kAdamBeta1) * g;
        const double vj = kAdamBeta2 * double(v[j]) + (1.0 - kAdamBeta2) * g * g;
        m[j] = Scalar(mj);
        v[j] = Scalar(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        theta[j] = Scalar(double(theta[j]) - mu * mhat / (std::sqrt(vhat) + kAdamEps));
    }
}

template <typename Scalar>
void adam_step(UNetParams<Scalar>& params, const UNetParams<Scalar>& grads,
               AdamState<Scalar>& state, double mu) {
    if (grads.layers.size() != params.layers.size())
        throw std::invalid_argument("adam_step: gradient layer count mismatch");
    state.t += 1;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& p = params.layers[i];
        const auto& g = grads.layers[i];
        auto& m = state.m.layers[i];
        auto& v = state.v.layers[i];
        const std::string tag = "layer " + std::to_string(i);
        adam_update_span<Scalar>(p.weights, g.weights, m.weights, v.weights, state.t, mu,
                                 tag + " weights");
        adam_update_span<Scalar>(p.bias, g.bias, m.bias, v.bias, state.t, mu, tag + " bias");
    }
}

struct SampleInfo {
    std::vector<int> patients;
    std::vector<std::array<std::uint32_t, 3>> corners;
};

// Fills one training batch: batch_size crops at uniformly random corners,
// each from a distinct patient unless reuse is allowed. Labels land one-hot
// in `target`.
template <typename Scalar>
void sample_batch(const Dataset& data, const Shape3& patch, int batch_size, std::mt19937_64& rng,
                  bool allow_patient_reuse, Tensor5<Scalar>& input, Tensor5<Scalar>& target,
                  SampleInfo* info = nullptr) {
    if (data.empty())
        throw std::invalid_argument("sample_batch: empty dataset");
    if (batch_size < 1)
        throw std::invalid_argument("sample_batch: batch_size must be >= 1");
    if (!allow_patient_reuse && std::size_t(batch_size) > data.size())
        throw std::invalid_argument("sample_batch: batch of " + std::to_string(batch_size) +
                                    " distinct patients from only " + std::to_string(data.size()));
    const int L = data.front().labels.num_classes;
    for (const Patient& p : data) {
        const Shape3& s = p.image.shape;
        if (s.nx < patch.nx || s.ny < patch.ny || s.nz < patch.nz)
            throw std::invalid_argument("sample_batch: volume " + s.str() +
                                        " smaller than patch " + patch.str());
        if (p.labels.num_classes != L)
            throw std::invalid_argument("sample_batch: mixed class counts in dataset");
    }
    if (input.batch != batch_size || input.channels != 1 || !(input.extent == patch))
        input = Tensor5<Scalar>::zeros(batch_size, 1, patch);
    if (target.batch != batch_size || target.channels != L || !(target.extent == patch))
        target = Tensor5<Scalar>::zeros(batch_size, L, patch);
    if (info) {
        info->patients.clear();
        info->corners.clear();
    }

    std::vector<int> pick(data.size());
    for (std::size_t i = 0; i < pick.size(); ++i)
        pick[i] = int(i);

    for (int b = 0; b < batch_size; ++b) {
        int pi;
        if (allow_patient_reuse) {
            pi = std::uniform_int_distribution<int>(0, int(data.size()) - 1)(rng);
        } else {
            const int j = std::uniform_int_distribution<int>(b, int(data.size()) - 1)(rng);
            std::swap(pick[std::size_t(b)], pick[std::size_t(j)]);
            pi = pick[std::size_t(b)];
        }
        const Patient& p = data[std::size_t(pi)];
        std::array<std::uint32_t, 3> corner;
        const Shape3& s = p.image.shape;
        corner[0] = std::uniform_int_distribution<std::uint32_t>(0, s.nx - patch.nx)(rng);
        corner[1] = std::uniform_int_distribution<std::uint32_t>(0, s.ny - patch.ny)(rng);
        corner[2] = std::uniform_int_distribution<std::uint32_t>(0, s.nz - patch.nz)(rng);
        load_crop(input, b, 0, p.image, corner);
        load_label_crop_one_hot(target, b, p.labels, corner);
        if (info) {
            info->patients.push_back(pi);
            info->corners.push_back(corner);
        }
    }
}

struct CurvePoint {
    int iteration = 0;
    double loss = 0.0;
    std::vector<double> dsc_per_class; // soft DSC (positive) on validation patches
    double mean_foreground_dsc = 0.0;
};

inline std::string curve_to_csv(std::span<const CurvePoint> curve, int num_classes) {
    std::string out = "iteration,loss";
    for (int l = 0; l < num_classes; ++l)
        out += ",dsc_class_" + std::to_string(l);
    out += ",mean_foreground_dsc\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        out += buf;
    };
    for (const CurvePoint& p : curve) {
        out += std::to_string(p.iteration);
        out += ",";
        num(p.loss);
        if (p.dsc_per_class.size() != std::size_t(num_classes))
            throw std::invalid_argument("curve_to_csv: point has wrong class count");
        for (double d : p.dsc_per_class) {
            out += ",";
            num(d);
        }
        out += ",";
        num(p.mean_foreground_dsc);
        out += "\n";
    }
    return out;
}

struct TrainResult {
    UNetParams<float> params;
    std::vector<CurvePoint> curve;
    ClassWeights weights;
    bool diverged = false;
    int diverged_iteration = -1;
    std::string divergence_reason;
};

namespace detail {

// Positive per-class soft DSC of a prediction batch, plus the foreground mean.
template <typename Scalar>
std::pair<std::vector<double>, double> soft_dsc_scores(const Tensor5<Scalar>& probs,
                                                       const Tensor5<Scalar>& target) {
    ClassWeights uniform;
    uniform.w.assign(std::size_t(probs.channels), 1.0);
    auto res = multiclass_dice_loss(probs, target, uniform, false);
    std::vector<double> dsc(res.per_class.size());
    for (std::size_t l = 0; l < dsc.size(); ++l)
        dsc[l] = -res.per_class[l];
    double fg = 0.0;
    for (std::size_t l = 1; l < dsc.size(); ++l)
        fg += dsc[l];
    const double mean_fg = dsc.size() > 1 ? fg / double(dsc.size() - 1) : dsc.front();
    return {std::move(dsc), mean_fg};
}

} // namespace detail

// Full training loop: sample -> forward -> softmax -> weighted Dice loss ->
// backward -> Adam. A non-finite loss or gradient ends the run with
// diverged=true (an outcome, not an error). Curve points are logged at every
// multiple of validation_interval with the pre-update batch loss and
// post-update validation DSC.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set,
                         const UNetConfig& net_cfg, const TrainConfig& cfg,
                         const UNetParams<float>* initial = nullptr) {
    net_cfg.validate();
    cfg.validate();
    if (train_set.empty())
        throw std::invalid_argument("train: empty training set");
    for (const Patient& p : train_set)
        if (p.labels.num_classes != net_cfg.num_classes)
            throw std::invalid_argument("train: dataset has " +
                                        std::to_string(p.labels.num_classes) +
                                        " classes, network expects " +
                                        std::to_string(net_cfg.num_classes));

    TrainResult result;

    ClassCounts counts;
    counts.per_class.assign(std::size_t(net_cfg.num_classes), 0);
    for (const Patient& p : train_set) {
        for (std::uint8_t l : p.labels.labels)
            ++counts.per_class[l];
        counts.total += p.labels.labels.size();
    }
    result.weights = class_weights(counts, cfg.scheme, cfg.weight_epsilon);

    UNetParams<float> params =
        initial ? *initial : init_params<float>(net_cfg, derive_seed(cfg.seed, kSaltInit));
    if (initial && !(initial->config == net_cfg))
        throw std::invalid_argument("train: initial parameters were built for another config");
    AdamState<float> adam = AdamState<float>::init(net_cfg);

    std::mt19937_64 sample_rng(derive_seed(cfg.seed, kSaltSample));
    std::mt19937_64 val_rng(derive_seed(cfg.seed, kSaltValidation));

    const Dataset& val_source = val_set.empty() ? train_set : val_set;
    Tensor5<float> val_input, val_target;
    sample_batch(val_source, net_cfg.patch, kValidationPatches, val_rng, true, val_input,
                 val_target);

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0)
        std::filesystem::create_directories(cfg.checkpoint_dir);

    auto mark_diverged = [&](int it, const char* what) {
        result.diverged = true;
        result.diverged_iteration = it;
        result.divergence_reason = "iteration " + std::to_string(it) + ", scheme " +
                                   to_string(cfg.scheme) + ", lr " +
                                   std::to_string(cfg.learning_rate) + ": " + what;
    };

    Tensor5<float> input, target;
    for (int it = 1; it <= cfg.iterations; ++it) {
        double loss = 0.0;
        try {
            sample_batch(train_set, net_cfg.patch, cfg.batch_size, sample_rng,
                         cfg.allow_patient_reuse, input, target);
            UNetCaches<float> caches;
            Tensor5<float> logits = unet_forward(params, input, &caches);
            SoftmaxContext<float> sctx;
            Tensor5<float> probs = softmax_channels(logits, &sctx);
            auto dice = multiclass_dice_loss(probs, target, result.weights, true);
            loss = dice.loss;
            Tensor5<float> grad_logits = softmax_backward(dice.grad, sctx);
            UNetParams<float> grads = unet_backward(params, caches, grad_logits);
            adam_step(params, grads, adam, cfg.learning_rate);
        } catch (const std::runtime_error& e) {
            mark_diverged(it, e.what());
            break;
        }

        if (it % cfg.validation_interval == 0) {
            // a blow-up can surface here first (the update precedes the
            // validation forward); that is still divergence, not an error
            try {
                Tensor5<float> val_logits = unet_forward(params, val_input);
                Tensor5<float> val_probs = softmax_channels(val_logits);
                auto [dsc, mean_fg] = detail::soft_dsc_scores(val_probs, val_target);
                CurvePoint point;
                point.iteration = it;
                point.loss = loss;
                point.dsc_per_class = std::move(dsc);
                point.mean_foreground_dsc = mean_fg;
                result.curve.push_back(std::move(point));
            } catch (const std::runtime_error& e) {
                mark_diverged(it, e.what());
                break;
            }
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            it % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "checkpoint_%06d.vnet", it);
            save_params(params, cfg.checkpoint_dir / name);
        }
    }
    result.params = std::move(params);
    return result;
}

} // namespace voxseg
