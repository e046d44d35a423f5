#pragma once

#include "twincore/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace twincore {

struct SceneObject {
    std::string id;
    Vec3 position;
    // Container currently holding this object, if any.
    std::optional<std::string> container;
    bool is_container = false;

    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

// Symbolic stand-in for the camera view.
struct SceneSnapshot {
    std::map<std::string, SceneObject> objects;
    std::optional<std::string> gripper_contents;
    // Level-triggered completion predicates, re-evaluated every tick.
    std::set<std::string> completed_tasks;

    friend bool operator==(const SceneSnapshot&, const SceneSnapshot&) = default;
};

// Proprioception q_t.
struct RobotState {
    JointVector q{};
    std::uint64_t tick = 0;
    bool moving = false;

    friend bool operator==(const RobotState&, const RobotState&) = default;
};

struct Observation {
    SceneSnapshot scene;
    std::uint64_t frame_id = 0;
    // Set when the requesting core's own task shows as complete in the scene.
    bool task_complete = false;

    friend bool operator==(const Observation&, const Observation&) = default;
};

// Objects resting on the table: not held and not inside a container.
std::vector<std::string> objects_on_table(const SceneSnapshot& scene);

nlohmann::json to_json(const SceneSnapshot& scene);
SceneSnapshot scene_from_json(const nlohmann::json& j);

nlohmann::json to_json(const JointVector& q);
JointVector joints_from_json(const nlohmann::json& j);

} // namespace twincore
