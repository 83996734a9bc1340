#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

// Batched dense tensor (batch, channel, x, y, z). Within a sample the layout
// is channel-major and z-fastest in space:
//   flat(b,c,x,y,z) = (((b*C + c)*nx + x)*ny + y)*nz + z
// Each (b,c) channel slab is therefore contiguous.
template <typename Scalar>
struct Tensor5 {
    int batch = 0;
    int channels = 0;
    Shape3 extent{1, 1, 1};
    std::vector<Scalar> values;

    Tensor5() = default;

    static Tensor5 zeros(int b, int c, Shape3 e) {
        if (b < 1 || c < 1)
            throw std::invalid_argument("Tensor5: batch and channels must be >= 1");
        validate_shape(e);
        Tensor5 t;
        t.batch = b;
        t.channels = c;
        t.extent = e;
        t.values.assign(std::size_t(b) * c * e.voxels(), Scalar(0));
        return t;
    }

    std::size_t offset(int b, int c, std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return ((((std::size_t(b) * channels + c) * extent.nx + x) * extent.ny + y) * extent.nz) + z;
    }

    Scalar at(int b, int c, std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return values[offset(b, c, x, y, z)];
    }
    Scalar& at(int b, int c, std::uint32_t x, std::uint32_t y, std::uint32_t z) {
        return values[offset(b, c, x, y, z)];
    }

    Scalar* channel(int b, int c) {
        return values.data() + (std::size_t(b) * channels + c) * extent.voxels();
    }
    const Scalar* channel(int b, int c) const {
        return values.data() + (std::size_t(b) * channels + c) * extent.voxels();
    }

    bool same_dims(const Tensor5& o) const {
        return batch == o.batch && channels == o.channels && extent == o.extent;
    }

    std::string dims_str() const {
        return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," + extent.str() + ")";
    }
};

// Finiteness sweep for debug/test builds; a no-op unless VOXSEG_CHECK_FINITE
// is defined for the translation unit.
template <typename Scalar>
inline void debug_check_finite(const Tensor5<Scalar>& t, const char* where) {
#ifdef VOXSEG_CHECK_FINITE
    for (const Scalar& v : t.values)
        if (!std::isfinite(double(v)))
            throw std::domain_error(std::string("non-finite tensor value after ") + where);
#else
    (void)t;
    (void)where;
#endif
}

// One-hot encodes a label grid into a (1, L, nx, ny, nz) tensor: channel c is
// 1 exactly where the label equals c.
template <typename Scalar = float>
Tensor5<Scalar> one_hot(const LabelVolume& labels) {
    Tensor5<Scalar> t = Tensor5<Scalar>::zeros(1, labels.num_classes, labels.shape);
    const Shape3& s = labels.shape;
    for (std::uint32_t z = 0; z < s.nz; ++z)
        for (std::uint32_t y = 0; y < s.ny; ++y)
            for (std::uint32_t x = 0; x < s.nx; ++x)
                t.at(0, labels.at(x, y, z), x, y, z) = Scalar(1);
    return t;
}

// Copies a patch-sized crop of a volume into sample b, channel c of a tensor.
template <typename Scalar>
void load_crop(Tensor5<Scalar>& t, int b, int c, const ScalarVolume& vol,
               std::array<std::uint32_t, 3> corner) {
    const Shape3& p = t.extent;
    if (corner[0] + p.nx > vol.shape.nx || corner[1] + p.ny > vol.shape.ny ||
        corner[2] + p.nz > vol.shape.nz)
        throw std::invalid_argument("load_crop: crop exceeds volume bounds");
    for (std::uint32_t x = 0; x < p.nx; ++x)
        for (std::uint32_t y = 0; y < p.ny; ++y) {
            Scalar* row = t.values.data() + t.offset(b, c, x, y, 0);
            for (std::uint32_t z = 0; z < p.nz; ++z)
                row[z] = Scalar(vol.at(corner[0] + x, corner[1] + y, corner[2] + z));
        }
}

// One-hot encodes a label crop directly into sample b of a target tensor
// whose channel count is the label volume's class count.
template <typename Scalar>
void load_label_crop_one_hot(Tensor5<Scalar>& t, int b, const LabelVolume& labels,
                             std::array<std::uint32_t, 3> corner) {
    const Shape3& p = t.extent;
    if (t.channels != labels.num_classes)
        throw std::invalid_argument("load_label_crop_one_hot: channel/class count mismatch");
    if (corner[0] + p.nx > labels.shape.nx || corner[1] + p.ny > labels.shape.ny ||
        corner[2] + p.nz > labels.shape.nz)
        throw std::invalid_argument("load_label_crop_one_hot: crop exceeds volume bounds");
    for (int c = 0; c < t.channels; ++c) {
        Scalar* slab = t.channel(b, c);
        std::fill(slab, slab + p.voxels(), Scalar(0));
    }
    for (std::uint32_t x = 0; x < p.nx; ++x)
        for (std::uint32_t y = 0; y < p.ny; ++y)
            for (std::uint32_t z = 0; z < p.nz; ++z)
                t.at(b, labels.at(corner[0] + x, corner[1] + y, corner[2] + z), x, y, z) = Scalar(1);
}

} // namespace voxseg
