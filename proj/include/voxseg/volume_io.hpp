#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "voxseg/volume.hpp"

// VVOL container, little-endian throughout:
//
//   offset  size  field
//   0       4     magic "VVOL"
//   4       1     version, currently 1
//   5       1     dtype: 0 = f32 payload, 1 = u8 label payload
//   6       1     num_classes: 0 for a plain scalar volume; L for labels;
//                 L >= 2 for an L-channel probability map (dtype 0)
//   7       1     reserved, 0
//   8       12    nx, ny, nz as u32
//   20      ...   payload, x-fastest; multi-channel payloads are class-major
//
// Round-trips are bit-exact: floats are written as their IEEE-754 bit
// patterns, never reformatted.

namespace voxseg {

enum class VvolErrc {
    OpenFailed,
    WriteFailed,
    BadMagic,
    BadVersion,
    BadDtype,
    BadClassCount,
    Truncated,
    TrailingBytes,
    LabelRange,
    NonFinite,
    WrongKind,
};

inline const char* to_string(VvolErrc c) {
    switch (c) {
        case VvolErrc::OpenFailed: return "OpenFailed";
        case VvolErrc::WriteFailed: return "WriteFailed";
        case VvolErrc::BadMagic: return "BadMagic";
        case VvolErrc::BadVersion: return "BadVersion";
        case VvolErrc::BadDtype: return "BadDtype";
        case VvolErrc::BadClassCount: return "BadClassCount";
        case VvolErrc::Truncated: return "Truncated";
        case VvolErrc::TrailingBytes: return "TrailingBytes";
        case VvolErrc::LabelRange: return "LabelRange";
        case VvolErrc::NonFinite: return "NonFinite";
        case VvolErrc::WrongKind: return "WrongKind";
    }
    return "Unknown";
}

class VvolError : public std::runtime_error {
public:
    VvolError(VvolErrc c, const std::string& msg)
        : std::runtime_error(std::string(to_string(c)) + ": " + msg), code(c) {}
    VvolErrc code;
};

using VolumeData = std::variant<ScalarVolume, LabelVolume, ProbabilityMap>;

namespace detail {

constexpr std::size_t kVvolHeaderSize = 20;
constexpr std::uint8_t kVvolVersion = 1;

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v & 0xff));
    out.push_back(std::uint8_t((v >> 8) & 0xff));
    out.push_back(std::uint8_t((v >> 16) & 0xff));
    out.push_back(std::uint8_t((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline void put_f32le(std::vector<std::uint8_t>& out, float f) {
    put_u32le(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32le(const std::uint8_t* p) {
    return std::bit_cast<float>(get_u32le(p));
}

inline std::vector<std::uint8_t> vvol_header(std::uint8_t dtype, std::uint8_t num_classes,
                                             const Shape3& s) {
    std::vector<std::uint8_t> h;
    h.reserve(kVvolHeaderSize);
    h.insert(h.end(), {'V', 'V', 'O', 'L'});
    h.push_back(kVvolVersion);
    h.push_back(dtype);
    h.push_back(num_classes);
    h.push_back(0); // reserved
    put_u32le(h, s.nx);
    put_u32le(h, s.ny);
    put_u32le(h, s.nz);
    return h;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw VvolError(VvolErrc::OpenFailed, "cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f)
        throw VvolError(VvolErrc::WriteFailed, "short write: " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw VvolError(VvolErrc::OpenFailed, "cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

inline std::vector<float> parse_f32_payload(const std::uint8_t* p, std::size_t count,
                                            const std::filesystem::path& path) {
    std::vector<float> vals(count);
    for (std::size_t i = 0; i < count; ++i) {
        vals[i] = get_f32le(p + 4 * i);
        if (!std::isfinite(vals[i]))
            throw VvolError(VvolErrc::NonFinite,
                            "non-finite value at element " + std::to_string(i) + " in " + path.string());
    }
    return vals;
}

} // namespace detail

inline void write_volume(const ScalarVolume& vol, const std::filesystem::path& path) {
    auto bytes = detail::vvol_header(0, 0, vol.shape);
    bytes.reserve(bytes.size() + 4 * vol.values.size());
    for (float f : vol.values)
        detail::put_f32le(bytes, f);
    detail::write_file(path, bytes);
}

inline void write_volume(const LabelVolume& vol, const std::filesystem::path& path) {
    auto bytes = detail::vvol_header(1, std::uint8_t(vol.num_classes), vol.shape);
    bytes.insert(bytes.end(), vol.labels.begin(), vol.labels.end());
    detail::write_file(path, bytes);
}

inline void write_volume(const ProbabilityMap& map, const std::filesystem::path& path) {
    auto bytes = detail::vvol_header(0, std::uint8_t(map.num_classes), map.shape);
    bytes.reserve(bytes.size() + 4 * map.values.size());
    for (float f : map.values)
        detail::put_f32le(bytes, f);
    detail::write_file(path, bytes);
}

inline VolumeData read_volume(const std::filesystem::path& path) {
    using namespace detail;
    const auto bytes = read_file(path);
    if (bytes.size() < kVvolHeaderSize)
        throw VvolError(VvolErrc::Truncated, "file shorter than header: " + path.string());
    if (!(bytes[0] == 'V' && bytes[1] == 'V' && bytes[2] == 'O' && bytes[3] == 'L'))
        throw VvolError(VvolErrc::BadMagic, "not a VVOL file: " + path.string());
    if (bytes[4] != kVvolVersion)
        throw VvolError(VvolErrc::BadVersion,
                        "unsupported version " + std::to_string(int(bytes[4])) + ": " + path.string());
    const std::uint8_t dtype = bytes[5];
    const int num_classes = bytes[6];
    const Shape3 shape{get_u32le(&bytes[8]), get_u32le(&bytes[12]), get_u32le(&bytes[16])};
    validate_shape(shape);
    const std::size_t voxels = shape.voxels();
    const std::size_t body = bytes.size() - kVvolHeaderSize;
    const std::uint8_t* payload = bytes.data() + kVvolHeaderSize;

    auto expect_body = [&](std::size_t want) {
        if (body < want)
            throw VvolError(VvolErrc::Truncated, "payload has " + std::to_string(body) +
                                                     " bytes, expected " + std::to_string(want) +
                                                     ": " + path.string());
        if (body > want)
            throw VvolError(VvolErrc::TrailingBytes, "payload has " + std::to_string(body - want) +
                                                         " extra bytes: " + path.string());
    };

    if (dtype == 0 && num_classes == 0) {
        expect_body(4 * voxels);
        return ScalarVolume(shape, parse_f32_payload(payload, voxels, path));
    }
    if (dtype == 0 && num_classes >= 2) {
        expect_body(4 * voxels * std::size_t(num_classes));
        return ProbabilityMap(shape, num_classes,
                              parse_f32_payload(payload, voxels * std::size_t(num_classes), path));
    }
    if (dtype == 0)
        throw VvolError(VvolErrc::BadClassCount,
                        "scalar dtype with num_classes=1: " + path.string());
    if (dtype == 1) {
        if (num_classes < 1)
            throw VvolError(VvolErrc::BadClassCount,
                            "label dtype needs num_classes >= 1: " + path.string());
        expect_body(voxels);
        std::vector<std::uint8_t> labels(payload, payload + voxels);
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (int(labels[i]) >= num_classes)
                throw VvolError(VvolErrc::LabelRange,
                                "label " + std::to_string(int(labels[i])) + " at voxel " +
                                    std::to_string(i) + " exceeds num_classes " +
                                    std::to_string(num_classes) + ": " + path.string());
        return LabelVolume(shape, std::move(labels), num_classes);
    }
    throw VvolError(VvolErrc::BadDtype, "dtype " + std::to_string(int(dtype)) + ": " + path.string());
}

inline ScalarVolume read_scalar_volume(const std::filesystem::path& path) {
    VolumeData d = read_volume(path);
    if (auto* v = std::get_if<ScalarVolume>(&d))
        return std::move(*v);
    throw VvolError(VvolErrc::WrongKind, "expected a scalar volume: " + path.string());
}

inline LabelVolume read_label_volume(const std::filesystem::path& path) {
    VolumeData d = read_volume(path);
    if (auto* v = std::get_if<LabelVolume>(&d))
        return std::move(*v);
    throw VvolError(VvolErrc::WrongKind, "expected a label volume: " + path.string());
}

inline ProbabilityMap read_probability_map(const std::filesystem::path& path) {
    VolumeData d = read_volume(path);
    if (auto* v = std::get_if<ProbabilityMap>(&d))
        return std::move(*v);
    throw VvolError(VvolErrc::WrongKind, "expected a probability map: " + path.string());
}

} // namespace voxseg
