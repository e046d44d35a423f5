#include "twincore/action.hpp"

#include "twincore/robot_sim.hpp"

#include <algorithm>
#include <cmath>

namespace twincore {

std::vector<JointVector> plan_trajectory(const TaskSpec& task, const JointVector& start, double speed)
{
    std::vector<JointVector> path;
    JointVector prev = start;
    JointVector goal{};
    for (std::size_t phase = 0; phase < task.phases.size(); ++phase) {
        for (const auto& [joint, value] : task.phases[phase].goal) {
            goal[joint] = value;
        }
        const double delta = max_abs_diff(prev, goal);
        const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(delta / speed - 1e-9)));
        for (std::size_t i = 1; i <= n; ++i) {
            JointVector p;
            if (i == n) {
                p = goal;
            } else {
                const double t = static_cast<double>(i) / static_cast<double>(n);
                for (std::size_t j = 0; j < kJointDim; ++j) {
                    p[j] = prev[j] + (goal[j] - prev[j]) * t;
                }
            }
            path.push_back(p);
        }
        prev = goal;
    }
    return path;
}

ScriptedExpert::ScriptedExpert(const SceneFixture& fixture, const TaskSpec& task) : fixture_(&fixture), task_(&task) {}

std::vector<JointVector> ScriptedExpert::next_chunk(const ConditioningPayload&, const RobotState& state)
{
    const auto pose_before = [&](std::size_t p) -> const JointVector& {
        return p == 0 ? origin_ : trajectory_[p - 1];
    };
    if (!planned_) {
        origin_ = state.q;
        trajectory_ = plan_trajectory(*task_, origin_, fixture_->expert_speed);
        cursor_ = 0;
        planned_ = true;
    } else {
        // Most likely the whole last chunk ran; prefer the furthest match
        // inside the window we emitted before scanning the rest.
        std::optional<std::size_t> found;
        const std::size_t hi = std::min(cursor_ + kChunkSteps, trajectory_.size());
        for (std::size_t p = hi + 1; p-- > cursor_;) {
            if (pose_before(p) == state.q) {
                found = p;
                break;
            }
        }
        for (std::size_t p = 0; !found && p <= trajectory_.size(); ++p) {
            if (pose_before(p) == state.q) {
                found = p;
            }
        }
        if (found) {
            cursor_ = *found;
        } else {
            origin_ = state.q;
            trajectory_ = plan_trajectory(*task_, origin_, fixture_->expert_speed);
            cursor_ = 0;
        }
    }
    if (cursor_ >= trajectory_.size()) {
        throw TrajectoryExhausted("trajectory exhausted for task " + task_->name);
    }
    std::vector<JointVector> steps;
    steps.reserve(kChunkSteps);
    for (std::size_t i = 0; i < kChunkSteps; ++i) {
        steps.push_back(trajectory_[std::min(cursor_ + i, trajectory_.size() - 1)]);
    }
    return steps;
}

bool ScriptedExpert::is_done(const SceneSnapshot& scene, const RobotState&) const
{
    return scene.completed_tasks.count(task_->name) > 0;
}

std::vector<ActionChunk> compute_retraction(const ActionStackEntry& entry)
{
    if (entry.executed.empty()) {
        throw EmptyStack();
    }
    std::vector<JointVector> path;
    path.reserve(entry.executed.size());
    for (std::size_t i = entry.executed.size() - 1; i-- > 0;) {
        path.push_back(entry.executed[i]);
    }
    path.push_back(entry.start_pose);

    std::vector<ActionChunk> chunks;
    for (std::size_t i = 0; i < path.size(); i += kChunkSteps) {
        ActionChunk c;
        const auto end = std::min(path.size(), i + kChunkSteps);
        c.steps.assign(path.begin() + static_cast<std::ptrdiff_t>(i), path.begin() + static_cast<std::ptrdiff_t>(end));
        chunks.push_back(std::move(c));
    }
    return chunks;
}

std::vector<ActionChunk> compute_retraction(const std::vector<ActionStackEntry>& stack)
{
    if (stack.empty()) {
        throw EmptyStack();
    }
    std::vector<ActionChunk> out;
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        auto chunks = compute_retraction(*it);
        out.insert(out.end(), chunks.begin(), chunks.end());
    }
    return out;
}

void ActionStack::push(ActionStackEntry entry)
{
    if (entry.executed.empty()) {
        return;
    }
    entries_.push_back(std::move(entry));
    if (entries_.size() <= cap_) {
        return;
    }
    auto& first = entries_[0];
    auto& second = entries_[1];
    ActionStackEntry merged;
    merged.chunk_id = second.chunk_id;
    merged.start_pose = first.start_pose;
    merged.synthetic = true;
    merged.executed = std::move(first.executed);
    if (merged.executed.back() != second.start_pose) {
        merged.executed.push_back(second.start_pose);
    }
    merged.executed.insert(merged.executed.end(), second.executed.begin(), second.executed.end());
    entries_.erase(entries_.begin(), entries_.begin() + 2);
    entries_.insert(entries_.begin(), std::move(merged));
}

ActionStackEntry ActionStack::pop()
{
    if (entries_.empty()) {
        throw EmptyStack();
    }
    ActionStackEntry top = std::move(entries_.back());
    entries_.pop_back();
    return top;
}

std::string_view to_string(TaskOutcome::Kind kind)
{
    switch (kind) {
    case TaskOutcome::Kind::completed: return "completed";
    case TaskOutcome::Kind::halted: return "halted";
    case TaskOutcome::Kind::preempted: return "preempted";
    }
    return "?";
}

ActionLoop::ActionLoop(ActionExpert& expert, std::string instruction, RobotChannel& channel, Epoch epoch,
                       std::uint64_t& next_chunk_id, LoopOptions options)
    : expert_(&expert),
      instruction_(std::move(instruction)),
      channel_(&channel),
      epoch_(epoch),
      next_chunk_id_(&next_chunk_id),
      options_(std::move(options)),
      stack_(options_.stack_cap)
{
}

void ActionLoop::start(const Observation& observation, const RobotState& state)
{
    if (expert_->is_done(observation.scene, state)) {
        finish(TaskOutcome::Kind::completed, state.q);
        return;
    }
    send_expert_chunk(observation, state);
}

void ActionLoop::send_expert_chunk(const Observation& observation, const RobotState& state)
{
    std::vector<JointVector> steps;
    try {
        steps = expert_->next_chunk(derive_conditioning(instruction_, observation), state);
    } catch (const TrajectoryExhausted& e) {
        finish(TaskOutcome::Kind::halted, state.q, e.what());
        return;
    }
    bool clamped = false;
    JointVector prev = state.q;
    for (auto& step : steps) {
        for (std::size_t j = 0; j < kJointDim; ++j) {
            const double lo = prev[j] - options_.max_step_rad;
            const double hi = prev[j] + options_.max_step_rad;
            if (step[j] < lo || step[j] > hi || !std::isfinite(step[j])) {
                step[j] = std::isfinite(step[j]) ? std::clamp(step[j], lo, hi) : prev[j];
                clamped = true;
            }
        }
        prev = step;
    }
    if (clamped) {
        ++clamped_;
        if (options_.warn) {
            options_.warn("chunk exceeded max step; clamped");
        }
    }
    ActionChunk chunk;
    chunk.chunk_id = (*next_chunk_id_)++;
    chunk.epoch = epoch_;
    chunk.steps = std::move(steps);
    in_flight_ = chunk.chunk_id;
    in_flight_start_ = state.q;
    in_flight_is_retraction_ = false;
    in_flight_chunk_ = chunk;
    channel_->send_chunk(chunk);
}

void ActionLoop::send_next_retraction()
{
    ActionChunk chunk = std::move(retraction_queue_.front());
    retraction_queue_.erase(retraction_queue_.begin());
    chunk.chunk_id = (*next_chunk_id_)++;
    chunk.epoch = epoch_;
    in_flight_ = chunk.chunk_id;
    in_flight_is_retraction_ = true;
    in_flight_chunk_ = chunk;
    channel_->send_chunk(chunk);
}

void ActionLoop::on_ack(const ChunkAck& ack, const Observation& observation, const RobotState& state)
{
    if (phase_ == Phase::done || !in_flight_ || ack.chunk_id != *in_flight_) {
        return;
    }
    const auto executed = std::min<std::size_t>(ack.executed_steps, in_flight_chunk_.steps.size());
    in_flight_.reset();
    if (!in_flight_is_retraction_ && executed > 0) {
        ActionStackEntry entry;
        entry.chunk_id = ack.chunk_id;
        entry.start_pose = in_flight_start_;
        entry.executed.assign(in_flight_chunk_.steps.begin(),
                              in_flight_chunk_.steps.begin() + static_cast<std::ptrdiff_t>(executed));
        stack_.push(std::move(entry));
        ++outcome_.chunks_executed;
    }

    switch (phase_) {
    case Phase::running:
        if (expert_->is_done(observation.scene, state)) {
            finish(TaskOutcome::Kind::completed, state.q);
        } else {
            send_expert_chunk(observation, state);
        }
        return;
    case Phase::halting:
        if (stop_ == StopMode::halt_on_stop) {
            finish(TaskOutcome::Kind::halted, state.q);
            return;
        }
        phase_ = Phase::retracting;
        [[fallthrough]];
    case Phase::retracting:
        while (retraction_queue_.empty() && !stack_.empty()) {
            retraction_queue_ = compute_retraction(stack_.pop());
        }
        if (retraction_queue_.empty()) {
            finish(TaskOutcome::Kind::preempted, state.q);
            outcome_.retracted = true;
        } else {
            send_next_retraction();
        }
        return;
    case Phase::done:
        return;
    }
}

void ActionLoop::stop(StopMode mode, Epoch epoch)
{
    epoch_ = std::max(epoch_, epoch);
    switch (phase_) {
    case Phase::done:
        return;
    case Phase::running:
        stop_ = mode;
        phase_ = Phase::halting;
        channel_->send_halt(epoch_);
        return;
    case Phase::halting:
        if (mode == StopMode::halt_on_stop) {
            stop_ = mode;
        }
        return;
    case Phase::retracting:
        if (mode == StopMode::halt_on_stop) {
            stop_ = mode;
            phase_ = Phase::halting;
            retraction_queue_.clear();
            channel_->send_halt(epoch_);
        }
        return;
    }
}

void ActionLoop::channel_lost()
{
    if (phase_ != Phase::done) {
        finish(TaskOutcome::Kind::halted, in_flight_start_, "robot channel lost");
    }
}

void ActionLoop::finish(TaskOutcome::Kind kind, const JointVector& pose, std::optional<std::string> error)
{
    phase_ = Phase::done;
    in_flight_.reset();
    outcome_.kind = kind;
    outcome_.final_pose = pose;
    outcome_.error = std::move(error);
}

namespace {

class LoopbackChannel final : public RobotChannel {
public:
    explicit LoopbackChannel(RobotSim& robot) : robot_(&robot) {}
    void send_chunk(const ActionChunk& chunk) override { robot_->enqueue_chunk(chunk); }
    void send_halt(Epoch epoch) override { robot_->halt(epoch); }

private:
    RobotSim* robot_;
};

} // namespace

TaskOutcome run_action_loop(ActionExpert& expert, const std::string& instruction, RobotSim& robot,
                            const std::atomic<bool>& stop_flag, StopMode mode,
                            const std::function<void(std::uint64_t)>& on_tick, LoopOptions options)
{
    LoopbackChannel channel(robot);
    std::uint64_t next_id = 1;
    ActionLoop loop(expert, instruction, channel, robot.last_epoch(), next_id, std::move(options));
    loop.start(robot.observe(), robot.state());
    bool stopped = false;
    for (std::uint64_t guard = 0; !loop.finished() && guard < 1'000'000; ++guard) {
        if (!stopped && stop_flag.load()) {
            stopped = true;
            loop.stop(mode, robot.last_epoch() + 1);
        }
        const auto result = robot.step();
        if (on_tick) {
            on_tick(result.state.tick);
        }
        for (const auto& ack : result.acks) {
            loop.on_ack(ack, robot.observe(), result.state);
        }
    }
    if (!loop.finished()) {
        loop.channel_lost();
    }
    return loop.outcome();
}

} // namespace twincore
