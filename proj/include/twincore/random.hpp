#pragma once

#include <cstdint>
#include <string_view>

namespace twincore {

// Portable seeded generator. The standard distributions are
// implementation-defined, so everything that has to reproduce bit-for-bit
// across toolchains draws from this instead.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n) via multiply-shift; bias is below 2^-50 for the
    // ranges used here.
    std::uint64_t uniform_index(std::uint64_t n)
    {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

inline std::uint64_t mix64(std::uint64_t x)
{
    return SplitMix64(x).next();
}

inline std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace twincore
