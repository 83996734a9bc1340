#pragma once

#include <cstdint>

namespace voxseg {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic sub-seed derivation. Every random stream in the project is
// seeded through this, so a single base seed pins the whole experiment.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return splitmix64(splitmix64(base) ^ splitmix64(salt ^ 0xd1b54a32d192ed03ull));
}

} // namespace voxseg
