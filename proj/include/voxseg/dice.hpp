#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

// Overlap metrics and the weighted soft-Dice training loss.

namespace voxseg {

// Keeps empty channels (both prediction and reference all zero) at loss 0
// and gradient 0 instead of 0/0. Applied as a floor so any real denominator
// is untouched.
inline constexpr double kDiceDenomFloor = 1e-7;

enum class WeightScheme { Uniform, Simple, Square };

inline std::string to_string(WeightScheme s) {
    switch (s) {
    case WeightScheme::Uniform: return "uniform";
    case WeightScheme::Simple: return "simple";
    case WeightScheme::Square: return "square";
    }
    return "?";
}

inline WeightScheme parse_weight_scheme(const std::string& name) {
    if (name == "uniform")
        return WeightScheme::Uniform;
    if (name == "simple")
        return WeightScheme::Simple;
    if (name == "square")
        return WeightScheme::Square;
    throw std::invalid_argument("unknown weight scheme '" + name +
                                "' (expected uniform, simple or square)");
}

struct ClassCounts {
    std::vector<std::uint64_t> per_class;
    std::uint64_t total = 0;
};

// Voxel counts per class over a whole collection (typically the training
// split). num_classes = 0 takes L from the first volume.
inline ClassCounts class_counts(std::span<const LabelVolume> volumes, int num_classes = 0) {
    ClassCounts c;
    if (num_classes == 0 && !volumes.empty())
        num_classes = volumes.front().num_classes;
    if (num_classes > 0)
        c.per_class.assign(std::size_t(num_classes), 0);
    for (const LabelVolume& v : volumes) {
        if (v.num_classes != num_classes)
            throw std::invalid_argument("class_counts: volume has " +
                                        std::to_string(v.num_classes) + " classes, expected " +
                                        std::to_string(num_classes));
        for (std::uint8_t l : v.labels)
            ++c.per_class[l];
        c.total += v.labels.size();
    }
    return c;
}

struct ClassWeights {
    WeightScheme scheme = WeightScheme::Uniform;
    std::vector<double> w;
    double epsilon = 1.0;
};

inline ClassWeights class_weights(const ClassCounts& counts, WeightScheme scheme,
                                  double epsilon = 1.0) {
    const std::size_t L = counts.per_class.size();
    if (L < 2)
        throw std::invalid_argument("class_weights: need at least 2 classes, got " +
                                    std::to_string(L));
    if (!(epsilon > 0.0))
        throw std::invalid_argument("class_weights: epsilon must be positive");
    ClassWeights cw;
    cw.scheme = scheme;
    cw.epsilon = epsilon;
    cw.w.resize(L);
    const double N = double(counts.total);
    for (std::size_t l = 0; l < L; ++l) {
        const double R = double(counts.per_class[l]);
        switch (scheme) {
        case WeightScheme::Uniform: cw.w[l] = 1.0; break;
        case WeightScheme::Simple: cw.w[l] = N / (double(L) * R + epsilon); break;
        case WeightScheme::Square: cw.w[l] = N / (double(L) * R * R + epsilon); break;
        }
        if (!(cw.w[l] > 0.0) || !std::isfinite(cw.w[l]))
            throw std::runtime_error("class_weights: non-positive weight for class " +
                                     std::to_string(l));
    }
    return cw;
}

// 2|S∩R| / (|S|+|R|) for one class; 1.0 when the class is absent from both.
inline double hard_dsc(const LabelVolume& seg, const LabelVolume& truth, int class_id) {
    if (!(seg.shape == truth.shape))
        throw std::invalid_argument("hard_dsc: shape mismatch " + seg.shape.str() + " vs " +
                                    truth.shape.str());
    if (seg.num_classes != truth.num_classes)
        throw std::invalid_argument("hard_dsc: class count mismatch");
    if (class_id < 0 || class_id >= seg.num_classes)
        throw std::invalid_argument("hard_dsc: class " + std::to_string(class_id) +
                                    " out of range");
    std::uint64_t s = 0, r = 0, both = 0;
    const std::size_t n = seg.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool in_s = seg.labels[i] == class_id;
        const bool in_r = truth.labels[i] == class_id;
        s += in_s;
        r += in_r;
        both += in_s && in_r;
    }
    if (s + r == 0)
        return 1.0;
    return 2.0 * double(both) / double(s + r);
}

// L = -2*sum(s*r) / (sum(s) + sum(r)), accumulated in f64.
template <typename Scalar>
double soft_dice_loss(std::span<const Scalar> s, std::span<const Scalar> r) {
    if (s.size() != r.size() || s.empty())
        throw std::invalid_argument("soft_dice_loss: element counts " + std::to_string(s.size()) +
                                    " vs " + std::to_string(r.size()));
    double A = 0.0, B = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double sv = double(s[i]), rv = double(r[i]);
        if (!std::isfinite(sv) || !std::isfinite(rv))
            throw std::runtime_error("soft_dice_loss: non-finite input at element " +
                                     std::to_string(i));
        A += sv * rv;
        B += sv + rv;
    }
    return -2.0 * A / std::max(B, kDiceDenomFloor);
}

// dL/ds_j = -2*(r_j*B - A)/B^2 with the same denominator floor as the loss.
template <typename Scalar>
std::vector<Scalar> soft_dice_grad(std::span<const Scalar> s, std::span<const Scalar> r) {
    if (s.size() != r.size() || s.empty())
        throw std::invalid_argument("soft_dice_grad: element counts " + std::to_string(s.size()) +
                                    " vs " + std::to_string(r.size()));
    double A = 0.0, B = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double sv = double(s[i]), rv = double(r[i]);
        if (!std::isfinite(sv) || !std::isfinite(rv))
            throw std::runtime_error("soft_dice_grad: non-finite input at element " +
                                     std::to_string(i));
        A += sv * rv;
        B += sv + rv;
    }
    const double D = std::max(B, kDiceDenomFloor);
    std::vector<Scalar> g(s.size());
    for (std::size_t j = 0; j < s.size(); ++j)
        g[j] = Scalar(-2.0 * (double(r[j]) * D - A) / (D * D));
    return g;
}

template <typename Scalar>
struct MulticlassDiceResult {
    double loss = 0.0;
    std::vector<double> per_class; // unweighted soft-Dice term of each channel
    Tensor5<Scalar> grad;
};

// loss = (1/L) * sum_l w_l * softdice(channel l), channels pooled over the
// whole batch. Gradient w.r.t. pred has the matching w_l/L scaling.
template <typename Scalar>
MulticlassDiceResult<Scalar> multiclass_dice_loss(const Tensor5<Scalar>& pred,
                                                  const Tensor5<Scalar>& target,
                                                  const ClassWeights& weights,
                                                  bool want_grad = true) {
    if (!pred.same_dims(target))
        throw std::invalid_argument("multiclass_dice_loss: pred dims " + pred.dims_str() +
                                    " vs target " + target.dims_str());
    const int L = pred.channels;
    if (std::size_t(L) != weights.w.size())
        throw std::invalid_argument("multiclass_dice_loss: " + std::to_string(L) +
                                    " channels vs " + std::to_string(weights.w.size()) +
                                    " weights");
    MulticlassDiceResult<Scalar> res;
    res.per_class.assign(std::size_t(L), 0.0);
    if (want_grad)
        res.grad = Tensor5<Scalar>::zeros(pred.batch, L, pred.extent);

    const std::size_t slab = pred.extent.voxels();
#pragma omp parallel for schedule(static)
    for (int l = 0; l < L; ++l) {
        double A = 0.0, B = 0.0;
        for (int b = 0; b < pred.batch; ++b) {
            const Scalar* sv = pred.channel(b, l);
            const Scalar* rv = target.channel(b, l);
            for (std::size_t v = 0; v < slab; ++v) {
                A += double(sv[v]) * double(rv[v]);
                B += double(sv[v]) + double(rv[v]);
            }
        }
        const double D = std::max(B, kDiceDenomFloor);
        res.per_class[std::size_t(l)] = -2.0 * A / D;
        if (want_grad) {
            const double scale = weights.w[std::size_t(l)] / double(L);
            for (int b = 0; b < pred.batch; ++b) {
                const Scalar* rv = target.channel(b, l);
                Scalar* gv = res.grad.channel(b, l);
                for (std::size_t v = 0; v < slab; ++v)
                    gv[v] = Scalar(scale * (-2.0 * (double(rv[v]) * D - A) / (D * D)));
            }
        }
    }
    double loss = 0.0;
    for (int l = 0; l < L; ++l)
        loss += weights.w[std::size_t(l)] * res.per_class[std::size_t(l)];
    res.loss = loss / double(L);
    if (!std::isfinite(res.loss))
        throw std::runtime_error("multiclass_dice_loss: non-finite loss");
    return res;
}

struct DiceReport {
    std::vector<std::string> class_names;
    std::vector<double> per_class;
    double avg = 0.0;
    double max = 0.0;
    double min = 0.0;

    static DiceReport from_per_class(std::vector<std::string> names, std::vector<double> values) {
        if (names.size() != values.size() || values.empty())
            throw std::invalid_argument("DiceReport: names/values size mismatch");
        DiceReport r;
        r.class_names = std::move(names);
        r.per_class = std::move(values);
        double sum = 0.0;
        r.max = r.per_class.front();
        r.min = r.per_class.front();
        for (double v : r.per_class) {
            sum += v;
            r.max = std::max(r.max, v);
            r.min = std::min(r.min, v);
        }
        r.avg = sum / double(r.per_class.size());
        return r;
    }
};

// Per-class hard DSC over full volumes, single counting pass.
inline DiceReport dice_report(const LabelVolume& pred, const LabelVolume& truth,
                              std::vector<std::string> class_names) {
    if (!(pred.shape == truth.shape))
        throw std::invalid_argument("dice_report: shape mismatch " + pred.shape.str() + " vs " +
                                    truth.shape.str());
    if (pred.num_classes != truth.num_classes)
        throw std::invalid_argument("dice_report: class count mismatch");
    const int L = pred.num_classes;
    if (class_names.size() != std::size_t(L))
        throw std::invalid_argument("dice_report: " + std::to_string(class_names.size()) +
                                    " names for " + std::to_string(L) + " classes");
    std::vector<std::uint64_t> s(std::size_t(L), 0), r(std::size_t(L), 0), both(std::size_t(L), 0);
    const std::size_t n = pred.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t p = pred.labels[i], t = truth.labels[i];
        ++s[p];
        ++r[t];
        if (p == t)
            ++both[p];
    }
    std::vector<double> values(std::size_t(L), 0.0);
    for (int l = 0; l < L; ++l) {
        const std::uint64_t denom = s[std::size_t(l)] + r[std::size_t(l)];
        values[std::size_t(l)] = denom == 0 ? 1.0 : 2.0 * double(both[std::size_t(l)]) / double(denom);
    }
    return DiceReport::from_per_class(std::move(class_names), std::move(values));
}

// "88.3" style rendering of a [0,1] ratio.
inline std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
    return buf;
}

// Rows are classes plus AVG/MAX/MIN, one column per run. Diverged runs keep
// their column with "diverged" in every cell.
struct DiceReportTable {
    std::vector<std::string> class_names;
    std::vector<std::string> run_labels;
    std::vector<std::vector<std::string>> columns; // cells per run, classes then AVG/MAX/MIN

    explicit DiceReportTable(std::vector<std::string> names) : class_names(std::move(names)) {
        if (class_names.empty())
            throw std::invalid_argument("DiceReportTable: no class names");
    }

    void add(const std::string& label, const DiceReport& report) {
        if (report.per_class.size() != class_names.size())
            throw std::invalid_argument("DiceReportTable: report has " +
                                        std::to_string(report.per_class.size()) +
                                        " classes, table has " +
                                        std::to_string(class_names.size()));
        std::vector<std::string> col;
        col.reserve(class_names.size() + 3);
        for (double v : report.per_class)
            col.push_back(format_percent(v));
        col.push_back(format_percent(report.avg));
        col.push_back(format_percent(report.max));
        col.push_back(format_percent(report.min));
        run_labels.push_back(label);
        columns.push_back(std::move(col));
    }

    void add_diverged(const std::string& label) {
        run_labels.push_back(label);
        columns.emplace_back(class_names.size() + 3, "diverged");
    }

    std::string to_csv() const {
        std::string out = "class";
        for (const std::string& l : run_labels)
            out += "," + l;
        out += "\n";
        std::vector<std::string> rows = class_names;
        rows.insert(rows.end(), {"AVG", "MAX", "MIN"});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            out += rows[r];
            for (const auto& col : columns)
                out += "," + col[r];
            out += "\n";
        }
        return out;
    }
};

} // namespace voxseg
