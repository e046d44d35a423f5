#pragma once

// Kinematic 26-DoF robot with a symbolic scene. One step() is one 50 ms
// control tick; queued joint targets are applied exactly, one per tick.

#include "twincore/chunk.hpp"
#include "twincore/scene.hpp"
#include "twincore/task.hpp"

#include <cstdint>
#include <deque>
#include <vector>

namespace twincore {

struct StepRecord {
    std::uint64_t tick = 0;
    std::uint64_t chunk_id = 0;
    std::uint32_t index = 0;
    Epoch epoch = 0;
    JointVector q{};

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct StepResult {
    RobotState state;
    // Acks produced since the previous step: halts, stale rejections, and
    // chunks that finished on this tick.
    std::vector<ChunkAck> acks;
};

class RobotSim {
public:
    explicit RobotSim(const SceneFixture& fixture);

    // Queues the chunk's steps. A chunk older than the last seen epoch is
    // rejected and acknowledged with zero executed steps.
    bool enqueue_chunk(const ActionChunk& chunk);

    // Clears the queue. A partially played chunk is acknowledged with its
    // executed prefix, unstarted ones with zero. Stale halts are ignored.
    RobotState halt(Epoch epoch);

    StepResult step();

    RobotState state() const { return state_; }
    Observation observe() const;
    const SceneSnapshot& scene() const { return scene_; }
    const std::vector<StepRecord>& step_log() const { return step_log_; }
    Epoch last_epoch() const { return last_epoch_; }
    std::size_t queued_steps() const { return queue_.size(); }
    std::uint64_t rejected_chunks() const { return rejected_; }

private:
    struct QueuedStep {
        std::uint64_t chunk_id;
        Epoch epoch;
        std::uint32_t index;
        std::uint32_t total;
        JointVector target;
    };

    void update_scene();

    const SceneFixture* fixture_;
    RobotState state_;
    SceneSnapshot scene_;
    std::deque<QueuedStep> queue_;
    std::vector<ChunkAck> pending_acks_;
    std::vector<StepRecord> step_log_;
    Epoch last_epoch_ = 0;
    std::uint64_t rejected_ = 0;
};

} // namespace twincore
