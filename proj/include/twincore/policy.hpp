#pragma once

// Policy backends: produce a streamed structured output for an utterance
// given the current observation. Handles are pull-based so a fast-clock
// session can drive them deterministically.

#include "twincore/clock.hpp"
#include "twincore/grammar.hpp"
#include "twincore/random.hpp"
#include "twincore/scene.hpp"

#include <array>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace twincore {

struct Exchange {
    std::string utterance;
    StructuredOutput reply;
};

inline constexpr std::size_t kDialogueContextCap = 16;

struct PolicyRequest {
    Observation observation;
    std::string utterance;
    RobotState robot_state;
    std::vector<Exchange> dialogue_context;
};

inline constexpr std::size_t kDigestDim = 16;

// Deterministic stand-in for the model's hidden states.
struct ConditioningPayload {
    std::string instruction;
    std::array<double, kDigestDim> observation_digest{};

    friend bool operator==(const ConditioningPayload&, const ConditioningPayload&) = default;
};

// Request object of the remote stream protocol:
// {"utterance", "scene", "state", "context"}. "state" also carries the
// observation's frame_id and task_complete flag.
nlohmann::json to_json(const PolicyRequest& request);
// Throws std::invalid_argument on a malformed request.
PolicyRequest policy_request_from_json(const nlohmann::json& j);

// Canonical byte string of a scene; equal scenes give equal strings.
std::string canonical_scene(const SceneSnapshot& scene);

// Throws std::invalid_argument on an empty instruction.
ConditioningPayload derive_conditioning(const std::string& instruction, const Observation& observation);

enum class GenerationStatus { live, completed, cancelled, failed };

std::string_view to_string(GenerationStatus status);

class BackendError : public std::runtime_error {
public:
    enum class Kind { unavailable, stream_interrupted };
    BackendError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

class GenerationHandle {
public:
    virtual ~GenerationHandle() = default;

    // Fragments that became available since the last call. Returns nothing
    // once the handle is terminal.
    virtual std::vector<std::string> poll() = 0;
    virtual GenerationStatus status() const = 0;
    // Idempotent. Safe from any thread.
    virtual GenerationStatus cancel() = 0;
    virtual std::optional<std::string> failure() const { return std::nullopt; }
};

class PolicyBackend {
public:
    virtual ~PolicyBackend() = default;
    // Must tolerate concurrent calls (one per core).
    virtual std::unique_ptr<GenerationHandle> generate(const PolicyRequest& request) = 0;
};

// Splits text into fragments of at most `max_code_points` UTF-8 code points.
std::vector<std::string> split_fragments(std::string_view text, std::size_t max_code_points);

// Emits pre-computed fragments on a fixed cadence against a clock.
class TimedGeneration final : public GenerationHandle {
public:
    TimedGeneration(const Clock& clock, std::vector<std::string> fragments, std::int64_t cadence_ms);

    std::vector<std::string> poll() override;
    GenerationStatus status() const override;
    GenerationStatus cancel() override;

private:
    const Clock* clock_;
    std::vector<std::string> fragments_;
    std::int64_t start_ms_;
    std::int64_t cadence_ms_;
    mutable std::mutex mutex_;
    std::size_t delivered_ = 0;
    GenerationStatus status_ = GenerationStatus::live;
};

struct ScriptedRule {
    enum class Kind { complete, halt, action, describe, story, question, fallback };

    std::string name;
    Kind kind = Kind::fallback;
    // Applied case-insensitively to the utterance; empty pattern matches anything.
    std::string pattern;
    ControlToken control = ControlToken::res;
    std::string speech;
    std::string instruction;
    // Chance the action is misread as a plain reply.
    double fault_probability = 0.0;
};

struct ScriptedConfig {
    std::vector<ScriptedRule> rules;
    std::uint64_t seed = 0;
    std::size_t fragment_code_points = 8;
    std::int64_t cadence_ms = 20;
    // Faults only fire when this holds for the request; defaults to "robot
    // already moving", i.e. a redirect during an action.
    std::function<bool(const PolicyRequest&)> fault_when;
};

// The built-in rule set: stop words, the fixture tasks, scene description,
// a long story, yes/no questions and a fallback.
std::vector<ScriptedRule> builtin_rules(double action_fault_probability = 0.0);

class ScriptedBackend final : public PolicyBackend {
public:
    ScriptedBackend(const Clock& clock, ScriptedConfig config);

    std::unique_ptr<GenerationHandle> generate(const PolicyRequest& request) override;

    // The complete output the next generate() would stream, without the
    // fault draw. Exposed for tests.
    std::string respond(const PolicyRequest& request, bool fault) const;
    const ScriptedRule& match(const PolicyRequest& request) const;

    std::uint64_t faults_injected() const;
    std::uint64_t fault_opportunities() const;

private:
    const Clock* clock_;
    ScriptedConfig config_;
    std::vector<std::regex> compiled_;
    mutable std::mutex mutex_;
    SplitMix64 rng_;
    std::uint64_t faults_ = 0;
    std::uint64_t opportunities_ = 0;
};

} // namespace twincore
