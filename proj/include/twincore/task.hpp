#pragma once

// Scenario fixture: the symbolic scene, the joint-space regions where grasp
// and release happen, and the scripted tasks the expert knows how to run.

#include "twincore/scene.hpp"
#include "twincore/types.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace twincore {

struct JointInterval {
    std::size_t joint = 0;
    double lo = 0.0;
    double hi = 0.0;
};

// Axis-aligned box in joint space. Unlisted joints are unconstrained.
struct JointBox {
    std::vector<JointInterval> bounds;

    bool contains(const JointVector& q) const;
};

struct GraspRegion {
    std::string object;
    JointBox box;
};

struct DropRegion {
    // nullopt drops back onto the table.
    std::optional<std::string> container;
    JointBox box;
};

// Absolute joint goals. Joints missing from the first phase target zero;
// later phases inherit the previous goal for missing joints.
struct TaskPhase {
    std::string name;
    std::map<std::size_t, double> goal;
};

struct TaskCompletion {
    std::optional<std::string> holding;
    // (object, container)
    std::optional<std::pair<std::string, std::string>> placed;
    JointBox pose;
};

struct TaskSpec {
    std::string name;
    // All keywords must occur in the instruction (case-insensitive).
    std::vector<std::string> keywords;
    std::vector<TaskPhase> phases;
    TaskCompletion completion;
};

struct SceneFixture {
    SceneSnapshot initial_scene;
    JointVector home{};
    std::size_t grip_joint = 20;
    double grip_closed = 0.5;
    double grip_open = 0.1;
    std::vector<GraspRegion> grasp_regions;
    std::vector<DropRegion> drop_regions;
    std::vector<TaskSpec> tasks;
    // Expert interpolation speed, rad per step.
    double expert_speed = 0.025;

    const TaskSpec* find_task(std::string_view name) const;
    // First task whose keywords all appear in the instruction.
    const TaskSpec* match_instruction(std::string_view instruction) const;
};

bool task_complete(const SceneFixture& fixture, const TaskSpec& task, const SceneSnapshot& scene,
                   const JointVector& q);

// apple, can and toy on the table plus a box; tasks pick_can, toy_in_box, wave.
const SceneFixture& builtin_fixture();

} // namespace twincore
