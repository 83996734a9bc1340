#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/unet3d.hpp"
#include "voxseg/volume.hpp"

// Full-volume prediction: tile the volume with overlapping patches, run each
// through the net, average the softmax maps where tiles overlap.

namespace voxseg {

struct TilingPlan {
    Shape3 volume{1, 1, 1};
    Shape3 patch{1, 1, 1};
    Shape3 stride{1, 1, 1};
    std::vector<std::array<std::uint32_t, 3>> corners;
    std::vector<std::uint32_t> coverage; // per voxel, x-fastest
};

namespace detail {

// Corner offsets along one axis: stride multiples, with the last tile pulled
// back flush against the far edge.
inline std::vector<std::uint32_t> axis_tiles(std::uint32_t len, std::uint32_t patch,
                                             std::uint32_t stride) {
    std::vector<std::uint32_t> out;
    for (std::uint32_t c = 0;; c += stride) {
        out.push_back(std::min(c, len - patch));
        if (c + patch >= len)
            break;
    }
    return out;
}

} // namespace detail

inline TilingPlan plan_tiles(const Shape3& volume, const Shape3& patch, const Shape3& stride) {
    validate_shape(volume);
    validate_shape(patch);
    if (stride.nx < 1 || stride.ny < 1 || stride.nz < 1)
        throw std::invalid_argument("plan_tiles: stride must be >= 1 per axis");
    if (stride.nx > patch.nx || stride.ny > patch.ny || stride.nz > patch.nz)
        throw std::invalid_argument("plan_tiles: stride " + stride.str() + " exceeds patch " +
                                    patch.str());
    if (patch.nx > volume.nx || patch.ny > volume.ny || patch.nz > volume.nz)
        throw std::invalid_argument("plan_tiles: patch " + patch.str() + " exceeds volume " +
                                    volume.str());
    TilingPlan plan;
    plan.volume = volume;
    plan.patch = patch;
    plan.stride = stride;
    const auto xs = detail::axis_tiles(volume.nx, patch.nx, stride.nx);
    const auto ys = detail::axis_tiles(volume.ny, patch.ny, stride.ny);
    const auto zs = detail::axis_tiles(volume.nz, patch.nz, stride.nz);
    for (std::uint32_t x : xs)
        for (std::uint32_t y : ys)
            for (std::uint32_t z : zs)
                plan.corners.push_back({x, y, z});
    plan.coverage.assign(volume.voxels(), 0);
    for (const auto& c : plan.corners)
        for (std::uint32_t z = 0; z < patch.nz; ++z)
            for (std::uint32_t y = 0; y < patch.ny; ++y) {
                const std::size_t row = volume.index(c[0], c[1] + y, c[2] + z);
                for (std::uint32_t x = 0; x < patch.nx; ++x)
                    ++plan.coverage[row + x];
            }
    return plan;
}

// Runs every tile through the net and averages softmax probabilities over
// covering tiles. Tiles run sequentially in plan order; per-voxel sums are
// accumulated in f64, so results do not depend on how ops parallelize.
inline ProbabilityMap predict_volume(const UNetParams<float>& params, const ScalarVolume& image,
                                     const TilingPlan& plan) {
    if (!(plan.patch == params.config.patch))
        throw std::invalid_argument("predict_volume: plan patch " + plan.patch.str() +
                                    " != network patch " + params.config.patch.str());
    if (!(plan.volume == image.shape))
        throw std::invalid_argument("predict_volume: plan volume " + plan.volume.str() +
                                    " != image shape " + image.shape.str());
    const int L = params.config.num_classes;
    const Shape3& vs = image.shape;
    const Shape3& ps = plan.patch;
    const std::size_t voxels = vs.voxels();
    std::vector<double> accum(std::size_t(L) * voxels, 0.0);

    Tensor5<float> input = Tensor5<float>::zeros(1, 1, ps);
    for (const auto& corner : plan.corners) {
        load_crop(input, 0, 0, image, corner);
        Tensor5<float> probs = softmax_channels(unet_forward(params, input));
        const std::size_t zstride = std::size_t(vs.nx) * vs.ny;
        for (int c = 0; c < L; ++c) {
            const float* pc = probs.channel(0, c);
            double* ac = accum.data() + std::size_t(c) * voxels;
            std::size_t pi = 0;
            // tile slab is z-fastest, the volume is x-fastest
            for (std::uint32_t x = 0; x < ps.nx; ++x)
                for (std::uint32_t y = 0; y < ps.ny; ++y) {
                    const std::size_t base = vs.index(corner[0] + x, corner[1] + y, corner[2]);
                    for (std::uint32_t z = 0; z < ps.nz; ++z, ++pi)
                        ac[base + z * zstride] += double(pc[pi]);
                }
        }
    }

    ProbabilityMap out = ProbabilityMap::zeros(vs, L);
    for (int c = 0; c < L; ++c) {
        const double* ac = accum.data() + std::size_t(c) * voxels;
        float* oc = out.values.data() + std::size_t(c) * voxels;
        for (std::size_t v = 0; v < voxels; ++v) {
            if (plan.coverage[v] == 0)
                throw std::logic_error("predict_volume: voxel left uncovered by plan");
            oc[v] = float(ac[v] / double(plan.coverage[v]));
        }
    }
    return out;
}

inline ProbabilityMap predict_volume(const UNetParams<float>& params, const ScalarVolume& image) {
    const Shape3& p = params.config.patch;
    const Shape3 stride{std::max(1u, p.nx / 2), std::max(1u, p.ny / 2), std::max(1u, p.nz / 2)};
    return predict_volume(params, image, plan_tiles(image.shape, p, stride));
}

// Per voxel: lowest class index attaining the maximum probability.
inline LabelVolume argmax_labels(const ProbabilityMap& pred) {
    LabelVolume out;
    out.shape = pred.shape;
    out.num_classes = pred.num_classes;
    const std::size_t voxels = pred.shape.voxels();
    out.labels.assign(voxels, 0);
    for (std::size_t v = 0; v < voxels; ++v) {
        float best = pred.values[v];
        int arg = 0;
        for (int c = 1; c < pred.num_classes; ++c) {
            const float p = pred.values[std::size_t(c) * voxels + v];
            if (p > best) {
                best = p;
                arg = c;
            }
        }
        out.labels[v] = std::uint8_t(arg);
    }
    return out;
}

namespace detail {

inline void check_downsample_args(const Shape3& s, int factor) {
    if (factor < 1)
        throw std::invalid_argument("downsample: factor must be >= 1");
    if (s.nx < std::uint32_t(factor) || s.ny < std::uint32_t(factor) ||
        s.nz < std::uint32_t(factor))
        throw std::invalid_argument("downsample: extents " + s.str() + " smaller than factor " +
                                    std::to_string(factor));
}

inline std::uint32_t ceil_div(std::uint32_t a, std::uint32_t b) { return (a + b - 1) / b; }

} // namespace detail

// Block mean; trailing partial blocks average over the voxels they actually
// contain.
inline ScalarVolume downsample(const ScalarVolume& vol, int factor = 4) {
    detail::check_downsample_args(vol.shape, factor);
    const std::uint32_t f = std::uint32_t(factor);
    ScalarVolume out;
    out.shape = Shape3{detail::ceil_div(vol.shape.nx, f), detail::ceil_div(vol.shape.ny, f),
                       detail::ceil_div(vol.shape.nz, f)};
    out.values.assign(out.shape.voxels(), 0.0f);
    for (std::uint32_t z = 0; z < out.shape.nz; ++z)
        for (std::uint32_t y = 0; y < out.shape.ny; ++y)
            for (std::uint32_t x = 0; x < out.shape.nx; ++x) {
                const std::uint32_t x1 = std::min(vol.shape.nx, (x + 1) * f);
                const std::uint32_t y1 = std::min(vol.shape.ny, (y + 1) * f);
                const std::uint32_t z1 = std::min(vol.shape.nz, (z + 1) * f);
                double sum = 0.0;
                std::uint32_t n = 0;
                for (std::uint32_t zz = z * f; zz < z1; ++zz)
                    for (std::uint32_t yy = y * f; yy < y1; ++yy)
                        for (std::uint32_t xx = x * f; xx < x1; ++xx) {
                            sum += double(vol.at(xx, yy, zz));
                            ++n;
                        }
                out.values[out.shape.index(x, y, z)] = float(sum / double(n));
            }
    return out;
}

// Majority vote per block, ties to the lowest class index.
inline LabelVolume downsample(const LabelVolume& vol, int factor = 4) {
    detail::check_downsample_args(vol.shape, factor);
    const std::uint32_t f = std::uint32_t(factor);
    LabelVolume out;
    out.num_classes = vol.num_classes;
    out.shape = Shape3{detail::ceil_div(vol.shape.nx, f), detail::ceil_div(vol.shape.ny, f),
                       detail::ceil_div(vol.shape.nz, f)};
    out.labels.assign(out.shape.voxels(), 0);
    std::vector<std::uint32_t> votes(std::size_t(vol.num_classes));
    for (std::uint32_t z = 0; z < out.shape.nz; ++z)
        for (std::uint32_t y = 0; y < out.shape.ny; ++y)
            for (std::uint32_t x = 0; x < out.shape.nx; ++x) {
                std::fill(votes.begin(), votes.end(), 0);
                const std::uint32_t x1 = std::min(vol.shape.nx, (x + 1) * f);
                const std::uint32_t y1 = std::min(vol.shape.ny, (y + 1) * f);
                const std::uint32_t z1 = std::min(vol.shape.nz, (z + 1) * f);
                for (std::uint32_t zz = z * f; zz < z1; ++zz)
                    for (std::uint32_t yy = y * f; yy < y1; ++yy)
                        for (std::uint32_t xx = x * f; xx < x1; ++xx)
                            ++votes[vol.at(xx, yy, zz)];
                int best = 0;
                for (int c = 1; c < vol.num_classes; ++c)
                    if (votes[std::size_t(c)] > votes[std::size_t(best)])
                        best = c;
                out.labels[out.shape.index(x, y, z)] = std::uint8_t(best);
            }
    return out;
}

} // namespace voxseg
