#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace voxseg {

// Voxel extents of a 3D grid. Volume storage is x-fastest:
// flat(x,y,z) = x + nx*(y + ny*z).
struct Shape3 {
    std::uint32_t nx = 1;
    std::uint32_t ny = 1;
    std::uint32_t nz = 1;

    friend bool operator==(const Shape3&, const Shape3&) = default;

    std::size_t voxels() const { return std::size_t(nx) * ny * nz; }

    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return std::size_t(x) + std::size_t(nx) * (std::size_t(y) + std::size_t(ny) * z);
    }

    std::string str() const {
        return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
    }
};

inline Shape3 cube(std::uint32_t n) { return Shape3{n, n, n}; }

inline void validate_shape(const Shape3& s) {
    if (s.nx == 0 || s.ny == 0 || s.nz == 0)
        throw std::invalid_argument("Shape3: every extent must be >= 1, got " + s.str());
    const std::size_t xy = std::size_t(s.nx) * s.ny;
    if (xy > std::numeric_limits<std::size_t>::max() / s.nz)
        throw std::invalid_argument("Shape3: voxel count overflows, got " + s.str());
}

} // namespace voxseg
