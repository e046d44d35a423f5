#include "twincore/scene.hpp"

#include <stdexcept>

namespace twincore {

std::vector<std::string> objects_on_table(const SceneSnapshot& scene)
{
    std::vector<std::string> ids;
    for (const auto& [id, object] : scene.objects) {
        if (object.container || scene.gripper_contents == id) {
            continue;
        }
        ids.push_back(id);
    }
    return ids;
}

nlohmann::json to_json(const JointVector& q)
{
    return nlohmann::json(std::vector<double>(q.begin(), q.end()));
}

JointVector joints_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.size() != kJointDim) {
        throw std::invalid_argument("joint vector must be an array of 26 numbers");
    }
    JointVector q{};
    for (std::size_t i = 0; i < kJointDim; ++i) {
        if (!j[i].is_number()) {
            throw std::invalid_argument("joint vector entries must be numbers");
        }
        q[i] = j[i].get<double>();
    }
    return q;
}

nlohmann::json to_json(const SceneSnapshot& scene)
{
    nlohmann::json objects = nlohmann::json::object();
    for (const auto& [id, object] : scene.objects) {
        nlohmann::json o;
        o["position"] = {object.position.x, object.position.y, object.position.z};
        o["container"] = object.container ? nlohmann::json(*object.container) : nlohmann::json(nullptr);
        o["is_container"] = object.is_container;
        objects[id] = std::move(o);
    }
    return {
        {"objects", std::move(objects)},
        {"gripper", scene.gripper_contents ? nlohmann::json(*scene.gripper_contents) : nlohmann::json(nullptr)},
        {"completed", scene.completed_tasks},
    };
}

SceneSnapshot scene_from_json(const nlohmann::json& j)
{
    SceneSnapshot scene;
    for (const auto& [id, o] : j.at("objects").items()) {
        SceneObject object;
        object.id = id;
        const auto& p = o.at("position");
        object.position = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
        if (o.contains("container") && !o["container"].is_null()) {
            object.container = o["container"].get<std::string>();
        }
        object.is_container = o.value("is_container", false);
        scene.objects.emplace(id, std::move(object));
    }
    if (j.contains("gripper") && !j["gripper"].is_null()) {
        scene.gripper_contents = j["gripper"].get<std::string>();
    }
    if (j.contains("completed")) {
        for (const auto& t : j["completed"]) {
            scene.completed_tasks.insert(t.get<std::string>());
        }
    }
    return scene;
}

} // namespace twincore
