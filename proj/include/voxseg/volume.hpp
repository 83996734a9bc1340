#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "voxseg/shape.hpp"

namespace voxseg {

// Dense intensity grid, x-fastest layout. Construction rejects wrong-sized
// payloads and non-finite values (fail fast instead of propagating NaN).
struct ScalarVolume {
    Shape3 shape;
    std::vector<float> values;

    ScalarVolume() : values(1, 0.0f) {}

    ScalarVolume(Shape3 s, std::vector<float> v) : shape(s), values(std::move(v)) {
        validate_shape(shape);
        if (values.size() != shape.voxels())
            throw std::invalid_argument("ScalarVolume: payload has " + std::to_string(values.size()) +
                                        " values, shape " + shape.str() + " needs " +
                                        std::to_string(shape.voxels()));
        for (float f : values)
            if (!std::isfinite(f))
                throw std::invalid_argument("ScalarVolume: non-finite voxel value");
    }

    static ScalarVolume filled(Shape3 s, float v) {
        validate_shape(s);
        return ScalarVolume(s, std::vector<float>(s.voxels(), v));
    }

    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return values[shape.index(x, y, z)];
    }
};

// Dense class-id grid, x-fastest. Every label must lie in [0, num_classes).
struct LabelVolume {
    Shape3 shape;
    std::vector<std::uint8_t> labels;
    int num_classes = 1;

    LabelVolume() : labels(1, 0) {}

    LabelVolume(Shape3 s, std::vector<std::uint8_t> l, int classes)
        : shape(s), labels(std::move(l)), num_classes(classes) {
        validate_shape(shape);
        if (num_classes < 1 || num_classes > 255)
            throw std::invalid_argument("LabelVolume: num_classes must be in [1,255], got " +
                                        std::to_string(num_classes));
        if (labels.size() != shape.voxels())
            throw std::invalid_argument("LabelVolume: payload has " + std::to_string(labels.size()) +
                                        " labels, shape " + shape.str() + " needs " +
                                        std::to_string(shape.voxels()));
        for (std::uint8_t v : labels)
            if (int(v) >= num_classes)
                throw std::invalid_argument("LabelVolume: label " + std::to_string(int(v)) +
                                            " out of range for " + std::to_string(num_classes) +
                                            " classes");
    }

    static LabelVolume filled(Shape3 s, std::uint8_t v, int classes) {
        validate_shape(s);
        return LabelVolume(s, std::vector<std::uint8_t>(s.voxels(), v), classes);
    }

    std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return labels[shape.index(x, y, z)];
    }
};

// Per-class probability field over a volume. Channels are stored class-major,
// each channel x-fastest, matching the multi-channel VVOL payload order.
struct ProbabilityMap {
    Shape3 shape;
    int num_classes = 2;
    std::vector<float> values;

    ProbabilityMap() : values(2, 0.0f) {}

    ProbabilityMap(Shape3 s, int classes, std::vector<float> v)
        : shape(s), num_classes(classes), values(std::move(v)) {
        validate_shape(shape);
        if (num_classes < 2 || num_classes > 255)
            throw std::invalid_argument("ProbabilityMap: num_classes must be in [2,255], got " +
                                        std::to_string(num_classes));
        if (values.size() != shape.voxels() * std::size_t(num_classes))
            throw std::invalid_argument("ProbabilityMap: payload size mismatch for shape " +
                                        shape.str());
        for (float f : values)
            if (!std::isfinite(f))
                throw std::invalid_argument("ProbabilityMap: non-finite value");
    }

    static ProbabilityMap zeros(Shape3 s, int classes) {
        validate_shape(s);
        return ProbabilityMap(s, classes, std::vector<float>(s.voxels() * std::size_t(classes), 0.0f));
    }

    std::size_t index(int c, std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return std::size_t(c) * shape.voxels() + shape.index(x, y, z);
    }

    float at(int c, std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return values[index(c, x, y, z)];
    }
};

} // namespace voxseg
