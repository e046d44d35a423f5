#pragma once

// Action execution: expert interface, the retraction stack, and the
// resumable action loop that streams chunks to the robot.

#include "twincore/chunk.hpp"
#include "twincore/policy.hpp"
#include "twincore/scene.hpp"
#include "twincore/task.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace twincore {

class ActionExpert {
public:
    virtual ~ActionExpert() = default;
    // Always kChunkSteps steps. Throws TrajectoryExhausted when there is
    // nothing left to play.
    virtual std::vector<JointVector> next_chunk(const ConditioningPayload& conditioning, const RobotState& state) = 0;
    virtual bool is_done(const SceneSnapshot& scene, const RobotState& state) const = 0;
};

class TrajectoryExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense joint path through every phase goal from `start`. Each phase takes
// max(1, ceil(max joint delta / speed)) steps and lands on its goal exactly.
std::vector<JointVector> plan_trajectory(const TaskSpec& task, const JointVector& start, double speed);

class ScriptedExpert final : public ActionExpert {
public:
    ScriptedExpert(const SceneFixture& fixture, const TaskSpec& task);

    std::vector<JointVector> next_chunk(const ConditioningPayload& conditioning, const RobotState& state) override;
    bool is_done(const SceneSnapshot& scene, const RobotState& state) const override;

    const TaskSpec& task() const { return *task_; }
    const std::vector<JointVector>& trajectory() const { return trajectory_; }

private:
    const SceneFixture* fixture_;
    const TaskSpec* task_;
    JointVector origin_{};
    std::vector<JointVector> trajectory_;
    // Index of the next trajectory point to emit.
    std::size_t cursor_ = 0;
    bool planned_ = false;
};

struct ActionStackEntry {
    std::uint64_t chunk_id = 0;
    JointVector start_pose{};
    // Executed poses, in play order. Longer than one chunk only for a
    // compacted entry.
    std::vector<JointVector> executed;
    bool synthetic = false;
};

class EmptyStack : public std::logic_error {
public:
    EmptyStack() : std::logic_error("retraction requested on an empty stack") {}
};

// Inverse replay, LIFO. Each entry yields its executed poses reversed and
// shifted by one so the last pose is the entry's start_pose; entries longer
// than a chunk are split. Chunk ids and epochs are left zero.
std::vector<ActionChunk> compute_retraction(const std::vector<ActionStackEntry>& stack);
std::vector<ActionChunk> compute_retraction(const ActionStackEntry& entry);

inline constexpr std::size_t kStackCap = 256;
inline constexpr double kMaxStepRad = 0.05;

class ActionStack {
public:
    explicit ActionStack(std::size_t cap = kStackCap) : cap_(cap) {}

    // Entries with zero executed steps are ignored. Past the cap the two
    // oldest entries are merged.
    void push(ActionStackEntry entry);
    ActionStackEntry pop();
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<ActionStackEntry>& entries() const { return entries_; }

private:
    std::size_t cap_;
    std::vector<ActionStackEntry> entries_;
};

enum class StopMode { halt_on_stop, retract_on_stop };

struct TaskOutcome {
    enum class Kind { completed, halted, preempted };

    Kind kind = Kind::halted;
    bool retracted = false;
    std::uint64_t chunks_executed = 0;
    JointVector final_pose{};
    std::optional<std::string> error;
};

std::string_view to_string(TaskOutcome::Kind kind);

class RobotChannel {
public:
    virtual ~RobotChannel() = default;
    virtual void send_chunk(const ActionChunk& chunk) = 0;
    virtual void send_halt(Epoch epoch) = 0;
};

struct LoopOptions {
    double max_step_rad = kMaxStepRad;
    std::size_t stack_cap = kStackCap;
    std::function<void(const std::string&)> warn;
};

// Resumable action loop. The owner feeds it robot state and acks; the loop
// keeps exactly one chunk in flight and calls the channel to send.
//
//   start -> [chunk, ack]* -> Completed
//   stop(halt)    -> halt, wait for in-flight ack -> Halted
//   stop(retract) -> halt, wait, replay inverse chunks -> Preempted(retracted)
class ActionLoop {
public:
    ActionLoop(ActionExpert& expert, std::string instruction, RobotChannel& channel, Epoch epoch,
               std::uint64_t& next_chunk_id, LoopOptions options = {});

    void start(const Observation& observation, const RobotState& state);
    void on_ack(const ChunkAck& ack, const Observation& observation, const RobotState& state);
    // Level-triggered; a later halt overrides a pending retract.
    void stop(StopMode mode, Epoch epoch);
    // Robot link dropped: exit Halted with an error.
    void channel_lost();

    bool finished() const { return phase_ == Phase::done; }
    bool retracting() const { return phase_ == Phase::retracting; }
    bool stopping() const { return stop_.has_value(); }
    const TaskOutcome& outcome() const { return outcome_; }
    const ActionStack& stack() const { return stack_; }
    std::optional<std::uint64_t> in_flight() const { return in_flight_; }
    Epoch epoch() const { return epoch_; }
    std::uint64_t clamped_chunks() const { return clamped_; }

private:
    enum class Phase { running, halting, retracting, done };

    void send_expert_chunk(const Observation& observation, const RobotState& state);
    void send_next_retraction();
    void finish(TaskOutcome::Kind kind, const JointVector& pose, std::optional<std::string> error = std::nullopt);

    ActionExpert* expert_;
    std::string instruction_;
    RobotChannel* channel_;
    Epoch epoch_;
    std::uint64_t* next_chunk_id_;
    LoopOptions options_;
    Phase phase_ = Phase::running;
    std::optional<StopMode> stop_;
    ActionStack stack_;
    std::optional<std::uint64_t> in_flight_;
    ActionChunk in_flight_chunk_;
    JointVector in_flight_start_{};
    bool in_flight_is_retraction_ = false;
    std::vector<ActionChunk> retraction_queue_;
    TaskOutcome outcome_;
    std::uint64_t clamped_ = 0;
};

// Blocking convenience wrapper over a local simulator: runs the loop until
// it finishes, raising `stop_flag` after `stop_after_ticks` robot ticks if
// set. Returns the outcome; the simulator keeps the step log.
class RobotSim;
TaskOutcome run_action_loop(ActionExpert& expert, const std::string& instruction, RobotSim& robot,
                            const std::atomic<bool>& stop_flag, StopMode mode,
                            const std::function<void(std::uint64_t tick)>& on_tick = {}, LoopOptions options = {});

} // namespace twincore
