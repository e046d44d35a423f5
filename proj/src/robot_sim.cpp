#include "twincore/robot_sim.hpp"

#include <algorithm>

namespace twincore {

RobotSim::RobotSim(const SceneFixture& fixture) : fixture_(&fixture), scene_(fixture.initial_scene)
{
    state_.q = fixture.home;
    update_scene();
}

bool RobotSim::enqueue_chunk(const ActionChunk& chunk)
{
    if (chunk.epoch < last_epoch_ || chunk.steps.empty()) {
        ++rejected_;
        pending_acks_.push_back({chunk.chunk_id, 0});
        return false;
    }
    last_epoch_ = chunk.epoch;
    const auto total = static_cast<std::uint32_t>(chunk.steps.size());
    for (std::uint32_t i = 0; i < total; ++i) {
        queue_.push_back({chunk.chunk_id, chunk.epoch, i, total, chunk.steps[i]});
    }
    return true;
}

RobotState RobotSim::halt(Epoch epoch)
{
    if (epoch < last_epoch_) {
        return state_;
    }
    last_epoch_ = epoch;
    // One ack per distinct chunk still in the queue, reporting how much of it ran.
    std::uint64_t current = 0;
    bool have = false;
    for (const auto& s : queue_) {
        if (have && s.chunk_id == current) {
            continue;
        }
        current = s.chunk_id;
        have = true;
        pending_acks_.push_back({s.chunk_id, s.index});
    }
    queue_.clear();
    state_.moving = false;
    return state_;
}

StepResult RobotSim::step()
{
    ++state_.tick;
    if (queue_.empty()) {
        state_.moving = false;
    } else {
        const QueuedStep s = queue_.front();
        queue_.pop_front();
        state_.q = s.target;
        state_.moving = true;
        step_log_.push_back({state_.tick, s.chunk_id, s.index, s.epoch, s.target});
        if (s.index + 1 == s.total) {
            pending_acks_.push_back({s.chunk_id, s.total});
        }
    }
    update_scene();
    StepResult result;
    result.state = state_;
    result.acks.swap(pending_acks_);
    return result;
}

Observation RobotSim::observe() const
{
    Observation o;
    o.scene = scene_;
    o.frame_id = state_.tick;
    return o;
}

void RobotSim::update_scene()
{
    const auto& f = *fixture_;
    const double grip = state_.q[f.grip_joint];
    if (scene_.gripper_contents && grip < f.grip_open) {
        auto& held = scene_.objects.at(*scene_.gripper_contents);
        held.container.reset();
        for (const auto& region : f.drop_regions) {
            if (region.box.contains(state_.q)) {
                held.container = region.container;
                if (region.container) {
                    held.position = scene_.objects.at(*region.container).position;
                }
                break;
            }
        }
        scene_.gripper_contents.reset();
    } else if (!scene_.gripper_contents && grip >= f.grip_closed) {
        for (const auto& region : f.grasp_regions) {
            auto it = scene_.objects.find(region.object);
            if (it == scene_.objects.end() || it->second.container || !region.box.contains(state_.q)) {
                continue;
            }
            scene_.gripper_contents = region.object;
            break;
        }
    }
    scene_.completed_tasks.clear();
    for (const auto& task : f.tasks) {
        if (task_complete(f, task, scene_, state_.q)) {
            scene_.completed_tasks.insert(task.name);
        }
    }
}

} // namespace twincore
