#include "twincore/policy.hpp"

#include <algorithm>

namespace twincore {

namespace {

bool starts_with_vowel(std::string_view word)
{
    return !word.empty() && std::string_view("aeiouAEIOU").find(word.front()) != std::string_view::npos;
}

std::string describe_table(const SceneSnapshot& scene)
{
    const auto ids = objects_on_table(scene);
    std::vector<std::string> items;
    for (const auto& id : ids) {
        if (scene.objects.at(id).is_container) {
            continue;
        }
        items.push_back((starts_with_vowel(id) ? "an " : "a ") + id);
    }
    if (items.empty()) {
        return "I don't see anything on the table.";
    }
    std::string list = items.front();
    for (std::size_t i = 1; i < items.size(); ++i) {
        list += (i + 1 == items.size() ? " and " : ", ") + items[i];
    }
    return "I see " + list + " on the table.";
}

constexpr std::string_view kStory =
    "Once upon a time, a small robot lived in a busy kitchen. Every morning it sorted the cans, "
    "stacked the plates and listened to the people around it. One day a child asked it to build a "
    "tower of boxes, and the robot worked carefully until the tower reached the ceiling. Everyone "
    "cheered, and the robot learned that the best part of any task is the person you do it for.";

} // namespace

nlohmann::json to_json(const PolicyRequest& request)
{
    nlohmann::json context = nlohmann::json::array();
    for (const auto& e : request.dialogue_context) {
        context.push_back({{"utterance", e.utterance}, {"reply", serialize(e.reply)}});
    }
    return {
        {"utterance", request.utterance},
        {"scene", to_json(request.observation.scene)},
        {"state",
         {{"q", to_json(request.robot_state.q)},
          {"tick", request.robot_state.tick},
          {"moving", request.robot_state.moving},
          {"frame_id", request.observation.frame_id},
          {"task_complete", request.observation.task_complete}}},
        {"context", std::move(context)},
    };
}

PolicyRequest policy_request_from_json(const nlohmann::json& j)
{
    PolicyRequest r;
    try {
        r.utterance = j.at("utterance").get<std::string>();
        r.observation.scene = scene_from_json(j.at("scene"));
        const auto& st = j.at("state");
        r.robot_state.q = joints_from_json(st.at("q"));
        r.robot_state.tick = st.at("tick").get<std::uint64_t>();
        r.robot_state.moving = st.value("moving", false);
        r.observation.frame_id = st.value("frame_id", r.robot_state.tick);
        r.observation.task_complete = st.value("task_complete", false);
        for (const auto& e : j.value("context", nlohmann::json::array())) {
            r.dialogue_context.push_back(
                {e.at("utterance").get<std::string>(),
                 parse_structured_output(e.at("reply").get<std::string>(), ParseMode::strict)});
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("bad policy request: ") + e.what());
    } catch (const GrammarError& e) {
        throw std::invalid_argument(std::string("bad reply in context: ") + e.what());
    }
    return r;
}

std::string canonical_scene(const SceneSnapshot& scene)
{
    // to_json sorts object keys, so the dump is canonical.
    return to_json(scene).dump();
}

ConditioningPayload derive_conditioning(const std::string& instruction, const Observation& observation)
{
    if (instruction.empty()) {
        throw std::invalid_argument("derive_conditioning: empty instruction");
    }
    ConditioningPayload payload;
    payload.instruction = instruction;
    SplitMix64 rng(fnv1a64(canonical_scene(observation.scene)) ^ mix64(fnv1a64(instruction)));
    for (auto& v : payload.observation_digest) {
        v = rng.uniform01() * 2.0 - 1.0;
    }
    return payload;
}

std::string_view to_string(GenerationStatus status)
{
    switch (status) {
    case GenerationStatus::live: return "live";
    case GenerationStatus::completed: return "completed";
    case GenerationStatus::cancelled: return "cancelled";
    case GenerationStatus::failed: return "failed";
    }
    return "?";
}

std::vector<std::string> split_fragments(std::string_view text, std::size_t max_code_points)
{
    std::vector<std::string> out;
    std::string current;
    std::size_t count = 0;
    for (std::size_t i = 0; i < text.size();) {
        std::size_t len = 1;
        const auto lead = static_cast<unsigned char>(text[i]);
        if (lead >= 0xF0) {
            len = 4;
        } else if (lead >= 0xE0) {
            len = 3;
        } else if (lead >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        current.append(text.substr(i, len));
        i += len;
        if (++count == max_code_points) {
            out.push_back(std::move(current));
            current.clear();
            count = 0;
        }
    }
    if (!current.empty()) {
        out.push_back(std::move(current));
    }
    return out;
}

TimedGeneration::TimedGeneration(const Clock& clock, std::vector<std::string> fragments, std::int64_t cadence_ms)
    : clock_(&clock), fragments_(std::move(fragments)), start_ms_(clock.now_ms()), cadence_ms_(cadence_ms)
{
}

std::vector<std::string> TimedGeneration::poll()
{
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    if (status_ != GenerationStatus::live) {
        return out;
    }
    const std::int64_t elapsed = clock_->now_ms() - start_ms_;
    const auto due = static_cast<std::size_t>(std::max<std::int64_t>(0, elapsed / cadence_ms_));
    while (delivered_ < fragments_.size() && delivered_ < due) {
        out.push_back(fragments_[delivered_++]);
    }
    if (delivered_ == fragments_.size()) {
        status_ = GenerationStatus::completed;
    }
    return out;
}

GenerationStatus TimedGeneration::status() const
{
    std::lock_guard lock(mutex_);
    return status_;
}

GenerationStatus TimedGeneration::cancel()
{
    std::lock_guard lock(mutex_);
    if (status_ == GenerationStatus::live) {
        status_ = GenerationStatus::cancelled;
    }
    return status_;
}

std::vector<ScriptedRule> builtin_rules(double action_fault_probability)
{
    using K = ScriptedRule::Kind;
    using T = ControlToken;
    return {
        {"complete", K::complete, "", T::end, "The action is finished.", "", 0.0},
        {"halt", K::halt, R"(\b(stop|halt|freeze|terminate|abort)\b)", T::halt, "Stopping immediately.", "", 0.0},
        {"pick_can", K::action, R"(\b(pick|grab|get|fetch|bring)\b.*\bcan\b)", T::act, "Okay, I will pick up the can.",
         "Pick up the can.", action_fault_probability},
        {"toy_in_box", K::action, R"(\btoy\b.*\bbox\b)", T::act, "Okay, I will put the toy in the box.",
         "Pick up toy and place in box.", action_fault_probability},
        {"wave", K::action, R"(\bwave\b)", T::act, "Sure, I will wave.", "Wave hello.", action_fault_probability},
        {"describe", K::describe, R"(what do you see|what is on the table|what's on the table|describe)", T::res, "", "",
         0.0},
        {"story", K::story, R"(\bstory\b)", T::res, std::string(kStory), "", 0.0},
        {"question", K::question, R"(\?\s*$)", T::res, "Let me think. Yes, I believe so.", "", 0.0},
        {"fallback", K::fallback, "", T::res, "Okay, I heard you.", "", 0.0},
    };
}

ScriptedBackend::ScriptedBackend(const Clock& clock, ScriptedConfig config)
    : clock_(&clock), config_(std::move(config)), rng_(config_.seed)
{
    if (config_.rules.empty() || config_.rules.back().kind != ScriptedRule::Kind::fallback) {
        throw std::invalid_argument("scripted rule set must end with a fallback rule");
    }
    if (!config_.fault_when) {
        config_.fault_when = [](const PolicyRequest& r) { return r.robot_state.moving; };
    }
    for (const auto& rule : config_.rules) {
        compiled_.emplace_back(rule.pattern.empty() ? std::string("(?:)") : rule.pattern,
                               std::regex::ECMAScript | std::regex::icase | std::regex::optimize);
    }
}

const ScriptedRule& ScriptedBackend::match(const PolicyRequest& request) const
{
    for (std::size_t i = 0; i < config_.rules.size(); ++i) {
        const auto& rule = config_.rules[i];
        if (rule.kind == ScriptedRule::Kind::complete) {
            if (request.observation.task_complete) {
                return rule;
            }
            continue;
        }
        if (rule.kind == ScriptedRule::Kind::fallback || std::regex_search(request.utterance, compiled_[i])) {
            return rule;
        }
    }
    return config_.rules.back();
}

std::string ScriptedBackend::respond(const PolicyRequest& request, bool fault) const
{
    const auto& rule = match(request);
    StructuredOutput out;
    out.control = rule.control;
    out.speech = rule.speech;
    if (rule.kind == ScriptedRule::Kind::describe) {
        out.speech = describe_table(request.observation.scene);
    }
    if (rule.control == ControlToken::act) {
        if (fault) {
            out.control = ControlToken::res;
        } else {
            out.action_instruction = rule.instruction;
        }
    }
    return serialize(out);
}

std::unique_ptr<GenerationHandle> ScriptedBackend::generate(const PolicyRequest& request)
{
    if (request.utterance.empty() && !request.observation.task_complete) {
        throw std::invalid_argument("generate: empty utterance");
    }
    const auto& rule = match(request);
    bool fault = false;
    if (rule.kind == ScriptedRule::Kind::action && rule.fault_probability > 0.0 && config_.fault_when(request)) {
        std::lock_guard lock(mutex_);
        ++opportunities_;
        fault = rng_.uniform01() < rule.fault_probability;
        faults_ += fault ? 1 : 0;
    }
    return std::make_unique<TimedGeneration>(*clock_, split_fragments(respond(request, fault), config_.fragment_code_points),
                                             config_.cadence_ms);
}

std::uint64_t ScriptedBackend::faults_injected() const
{
    std::lock_guard lock(mutex_);
    return faults_;
}

std::uint64_t ScriptedBackend::fault_opportunities() const
{
    std::lock_guard lock(mutex_);
    return opportunities_;
}

} // namespace twincore
