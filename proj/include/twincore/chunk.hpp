#pragma once

#include "twincore/types.hpp"

#include <cstdint>
#include <vector>

namespace twincore {

// A block of joint targets played at the control rate. Expert chunks always
// carry kChunkSteps steps; retraction chunks may be shorter.
struct ActionChunk {
    std::uint64_t chunk_id = 0;
    Epoch epoch = 0;
    int rate_hz = kControlRateHz;
    std::vector<JointVector> steps;

    friend bool operator==(const ActionChunk&, const ActionChunk&) = default;
};

struct ChunkAck {
    std::uint64_t chunk_id = 0;
    std::uint32_t executed_steps = 0;

    friend bool operator==(const ChunkAck&, const ChunkAck&) = default;
};

} // namespace twincore
