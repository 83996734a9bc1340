#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxseg/dataset.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

// Synthetic multi-organ volumes: ellipsoidal "organs" on a dark background,
// geometrically shrinking per class so voxel counts are strongly imbalanced,
// one intensity band per class plus optional Gaussian noise. Everything is a
// pure function of (spec.seed, patient_index).

namespace voxseg {

struct EllipsoidSpec {
    int class_id = 1;
    std::array<double, 3> center_lo{};
    std::array<double, 3> center_hi{};
    std::array<double, 3> semi_lo{};
    std::array<double, 3> semi_hi{};
};

struct PhantomSpec {
    Shape3 shape{48, 48, 48};
    int num_classes = 8;
    std::vector<EllipsoidSpec> organs; // painted in order; later entries win overlaps
    std::vector<double> intensity_mean;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;

    void validate() const {
        validate_shape(shape);
        if (num_classes < 2 || num_classes > 255)
            throw std::invalid_argument("PhantomSpec: num_classes must be in [2, 255]");
        if (intensity_mean.size() != std::size_t(num_classes))
            throw std::invalid_argument("PhantomSpec: need one intensity mean per class");
        if (noise_sigma < 0.0 || !std::isfinite(noise_sigma))
            throw std::invalid_argument("PhantomSpec: noise_sigma must be >= 0");
        for (std::size_t a = 0; a < intensity_mean.size(); ++a)
            for (std::size_t b = a + 1; b < intensity_mean.size(); ++b)
                if (std::fabs(intensity_mean[a] - intensity_mean[b]) < 2.0 * noise_sigma)
                    throw std::invalid_argument(
                        "PhantomSpec: class means " + std::to_string(a) + " and " +
                        std::to_string(b) + " closer than 2 sigma");
        const double n[3] = {double(shape.nx), double(shape.ny), double(shape.nz)};
        for (const EllipsoidSpec& e : organs) {
            if (e.class_id < 1 || e.class_id >= num_classes)
                throw std::invalid_argument("PhantomSpec: organ class " +
                                            std::to_string(e.class_id) + " out of range");
            for (int a = 0; a < 3; ++a) {
                if (!(e.semi_lo[a] > 0.0) || e.semi_lo[a] > e.semi_hi[a])
                    throw std::invalid_argument("PhantomSpec: bad semi-axis range");
                if (e.center_lo[a] > e.center_hi[a])
                    throw std::invalid_argument("PhantomSpec: bad center range");
                if (e.center_hi[a] + e.semi_hi[a] > n[a] - 0.5 ||
                    e.center_lo[a] - e.semi_hi[a] < -0.5)
                    throw std::invalid_argument("PhantomSpec: ellipsoid for class " +
                                                std::to_string(e.class_id) +
                                                " can fall outside the volume");
            }
        }
    }

    // Default layout: organ k sits in its own octant (corner fractions 0.3 or
    // 0.7 per axis from the bits of k-1), sizes shrink geometrically so the
    // largest organ outweighs the smallest by roughly 50x in volume, and
    // intensity means ascend with the class index.
    static PhantomSpec standard(Shape3 shape = cube(48), int num_classes = 8,
                                double sigma = 0.02, std::uint64_t seed = 0) {
        if (num_classes < 2 || num_classes > 9)
            throw std::invalid_argument("PhantomSpec::standard: octant layout supports 2-9 classes");
        PhantomSpec spec;
        spec.shape = shape;
        spec.num_classes = num_classes;
        spec.noise_sigma = sigma;
        spec.seed = seed;
        const double n[3] = {double(shape.nx), double(shape.ny), double(shape.nz)};
        for (int k = 1; k < num_classes; ++k) {
            EllipsoidSpec e;
            e.class_id = k;
            const double scale = std::pow(0.805, double(k - 1));
            for (int a = 0; a < 3; ++a) {
                const double frac = ((k - 1) >> a) & 1 ? 0.7 : 0.3;
                const double jitter = 0.04 * n[a];
                e.center_lo[a] = frac * n[a] - jitter;
                e.center_hi[a] = frac * n[a] + jitter;
                e.semi_hi[a] = 0.24 * n[a] * scale;
                e.semi_lo[a] = 0.78 * e.semi_hi[a];
            }
            spec.organs.push_back(e);
        }
        for (int c = 0; c < num_classes; ++c)
            spec.intensity_mean.push_back(0.10 + 0.80 * double(c) / double(num_classes - 1));
        spec.validate();
        return spec;
    }
};

// One patient: jittered organ geometry, labels by ellipsoid membership,
// intensities = class mean + noise, clamped to [0, 1].
inline std::pair<ScalarVolume, LabelVolume> generate(const PhantomSpec& spec, int patient_index) {
    spec.validate();
    if (patient_index < 0)
        throw std::invalid_argument("generate: patient_index must be >= 0");
    std::mt19937_64 rng(derive_seed(spec.seed, std::uint64_t(patient_index)));

    const Shape3& s = spec.shape;
    std::vector<std::uint8_t> labels(s.voxels(), 0);
    for (const EllipsoidSpec& e : spec.organs) {
        double c[3], a[3];
        for (int i = 0; i < 3; ++i)
            c[i] = std::uniform_real_distribution<double>(e.center_lo[i], e.center_hi[i])(rng);
        for (int i = 0; i < 3; ++i)
            a[i] = std::uniform_real_distribution<double>(e.semi_lo[i], e.semi_hi[i])(rng);
        const auto lo = [](double v) { return std::uint32_t(std::max(0.0, std::ceil(v))); };
        const std::uint32_t x0 = lo(c[0] - a[0]), y0 = lo(c[1] - a[1]), z0 = lo(c[2] - a[2]);
        const std::uint32_t x1 = std::min(s.nx - 1, std::uint32_t(std::floor(c[0] + a[0])));
        const std::uint32_t y1 = std::min(s.ny - 1, std::uint32_t(std::floor(c[1] + a[1])));
        const std::uint32_t z1 = std::min(s.nz - 1, std::uint32_t(std::floor(c[2] + a[2])));
        for (std::uint32_t z = z0; z <= z1; ++z)
            for (std::uint32_t y = y0; y <= y1; ++y)
                for (std::uint32_t x = x0; x <= x1; ++x) {
                    const double dx = (double(x) - c[0]) / a[0];
                    const double dy = (double(y) - c[1]) / a[1];
                    const double dz = (double(z) - c[2]) / a[2];
                    if (dx * dx + dy * dy + dz * dz <= 1.0)
                        labels[s.index(x, y, z)] = std::uint8_t(e.class_id);
                }
    }

    std::vector<float> values(s.voxels());
    if (spec.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (std::size_t v = 0; v < values.size(); ++v) {
            const double raw = spec.intensity_mean[labels[v]] + noise(rng);
            values[v] = float(std::clamp(raw, 0.0, 1.0));
        }
    } else {
        for (std::size_t v = 0; v < values.size(); ++v)
            values[v] = float(spec.intensity_mean[labels[v]]);
    }
    return {ScalarVolume(s, std::move(values)),
            LabelVolume(s, std::move(labels), spec.num_classes)};
}

// First round(n * train_fraction) patients train, the rest test; indices are
// global so the same (seed, index) pair always regenerates the same patient.
inline LoadedDataset generate_dataset(const PhantomSpec& spec, int n_patients,
                                      double train_fraction) {
    if (n_patients < 2)
        throw std::invalid_argument("generate_dataset: need at least 2 patients");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw std::invalid_argument("generate_dataset: train fraction must be in (0, 1)");
    int n_train = int(std::lround(double(n_patients) * train_fraction));
    n_train = std::clamp(n_train, 1, n_patients - 1);
    LoadedDataset out;
    for (int i = 0; i < n_patients; ++i) {
        auto [img, lbl] = generate(spec, i);
        Patient p{std::move(img), std::move(lbl)};
        (i < n_train ? out.train : out.test).push_back(std::move(p));
    }
    return out;
}

} // namespace voxseg
