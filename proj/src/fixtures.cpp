#include "twincore/task.hpp"

#include <algorithm>
#include <cctype>

namespace twincore {

namespace {

// Joint layout: 0-6 left arm, 7-13 right arm, 14-19 left hand, 20-25 right hand.
constexpr std::size_t kShoulderYaw = 7;
constexpr std::size_t kShoulderPitch = 8;
constexpr std::size_t kElbow = 10;
constexpr std::size_t kWrist = 11;
constexpr std::size_t kWristRoll = 12;
constexpr std::size_t kGrip = 20;

std::string lowercase(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

SceneObject object(std::string id, Vec3 position, bool is_container = false)
{
    SceneObject o;
    o.id = std::move(id);
    o.position = position;
    o.is_container = is_container;
    return o;
}

SceneFixture make_builtin()
{
    SceneFixture f;
    for (auto o : {object("apple", {0.30, -0.20, 0.0}), object("can", {0.45, 0.10, 0.0}),
                   object("toy", {0.35, 0.30, 0.0}), object("box", {0.60, -0.35, 0.0}, true)}) {
        f.initial_scene.objects.emplace(o.id, o);
    }

    f.grasp_regions.push_back({"can", {{{kShoulderYaw, 0.55, 0.65}, {kElbow, 1.45, 1.55}, {kShoulderPitch, -0.05, 0.05}}}});
    f.grasp_regions.push_back({"toy", {{{kShoulderYaw, -0.45, -0.35}, {kElbow, 1.15, 1.25}, {kShoulderPitch, -0.05, 0.05}}}});
    f.drop_regions.push_back({"box", {{{kShoulderYaw, 0.85, 0.95}, {kShoulderPitch, 0.45, 0.55}}}});

    TaskSpec pick;
    pick.name = "pick_can";
    pick.keywords = {"can"};
    pick.phases = {
        {"reach", {{kShoulderYaw, 0.6}, {kElbow, 1.5}}},
        {"grasp", {{kGrip, 0.8}}},
        {"lift", {{kShoulderPitch, 0.8}}},
    };
    pick.completion.holding = "can";
    pick.completion.pose = {{{kShoulderPitch, 0.75, 0.85}}};
    f.tasks.push_back(pick);

    TaskSpec place;
    place.name = "toy_in_box";
    place.keywords = {"toy", "box"};
    place.phases = {
        {"reach", {{kShoulderYaw, -0.4}, {kElbow, 1.2}}},
        {"grasp", {{kGrip, 0.8}}},
        {"lift", {{kShoulderPitch, 0.5}}},
        {"transport", {{kShoulderYaw, 0.9}}},
        {"release", {{kGrip, 0.0}}},
        {"retreat", {{kShoulderYaw, 0.0}, {kShoulderPitch, 0.0}, {kElbow, 0.0}}},
    };
    place.completion.placed = std::pair<std::string, std::string>{"toy", "box"};
    place.completion.pose = {{{kShoulderYaw, -0.05, 0.05}, {kElbow, -0.05, 0.05}}};
    f.tasks.push_back(place);

    TaskSpec wave;
    wave.name = "wave";
    wave.keywords = {"wave"};
    wave.phases = {
        {"raise", {{kShoulderPitch, 1.0}, {kWrist, 0.5}}},
        {"left", {{kWrist, -0.5}}},
        {"right", {{kWrist, 0.5}}},
        {"settle", {{kWrist, 0.0}, {kWristRoll, 0.6}}},
    };
    wave.completion.pose = {{{kShoulderPitch, 0.95, 1.05}, {kWristRoll, 0.55, 0.65}}};
    f.tasks.push_back(wave);
    return f;
}

} // namespace

bool JointBox::contains(const JointVector& q) const
{
    return std::all_of(bounds.begin(), bounds.end(), [&](const JointInterval& b) {
        return b.joint < kJointDim && q[b.joint] >= b.lo && q[b.joint] <= b.hi;
    });
}

const TaskSpec* SceneFixture::find_task(std::string_view name) const
{
    for (const auto& t : tasks) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

const TaskSpec* SceneFixture::match_instruction(std::string_view instruction) const
{
    const std::string text = lowercase(instruction);
    for (const auto& t : tasks) {
        const bool all = std::all_of(t.keywords.begin(), t.keywords.end(),
                                     [&](const std::string& k) { return text.find(lowercase(k)) != std::string::npos; });
        if (all && !t.keywords.empty()) {
            return &t;
        }
    }
    return nullptr;
}

bool task_complete(const SceneFixture&, const TaskSpec& task, const SceneSnapshot& scene, const JointVector& q)
{
    const auto& c = task.completion;
    if (c.holding && scene.gripper_contents != c.holding) {
        return false;
    }
    if (c.placed) {
        auto it = scene.objects.find(c.placed->first);
        if (it == scene.objects.end() || it->second.container != c.placed->second) {
            return false;
        }
        if (scene.gripper_contents == c.placed->first) {
            return false;
        }
    }
    return c.pose.contains(q);
}

const SceneFixture& builtin_fixture()
{
    static const SceneFixture fixture = make_builtin();
    return fixture;
}

} // namespace twincore
