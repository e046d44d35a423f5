#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace twincore {

// Robot geometry and control cadence shared by every module.
inline constexpr std::size_t kJointDim = 26;
inline constexpr std::size_t kChunkSteps = 16;
inline constexpr int kControlRateHz = 20;
inline constexpr std::int64_t kTickMs = 1000 / kControlRateHz;

using JointVector = std::array<double, kJointDim>;

// Session-wide fencing counter. Every preemption and role swap bumps it.
using Epoch = std::uint64_t;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double max_abs_diff(const JointVector& a, const JointVector& b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < kJointDim; ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

inline bool all_finite(const JointVector& q)
{
    return std::all_of(q.begin(), q.end(), [](double v) { return std::isfinite(v); });
}

} // namespace twincore
