#pragma once

// Seeded multi-trial scenario runner over LocalSession, with success
// predicates and metrics computed from the session log and the robot's
// step log only.

#include "twincore/local_session.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace twincore {

struct ScenarioEvent {
    // Delivered at a tick drawn uniformly from [tick_min, tick_max].
    std::uint64_t tick_min = 0;
    std::uint64_t tick_max = 0;
    std::string text;
};

enum class ScenarioCheck { concurrency, speech_interruption, task_switching, emergency_stop, none };

std::string_view to_string(ScenarioCheck check);
std::optional<ScenarioCheck> scenario_check_from_string(std::string_view name);

struct ScenarioScript {
    std::string name;
    std::vector<ScenarioEvent> events;
    ScenarioCheck check = ScenarioCheck::none;
    std::size_t trials = 30;
    std::uint64_t seed = 0;
    // Misread chance on the backend's action rules.
    double fault_probability = 0.0;
    double min_success_rate = 1.0;
    std::uint64_t watchdog_ticks = 100000;
    std::uint64_t settle_ticks = 5;
};

class ScenarioInvalid : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void validate(const ScenarioScript& script);
ScenarioScript scenario_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ScenarioScript& script);

// concurrency, emergency_stop, speech_interruption, task_switching.
std::vector<ScenarioScript> builtin_scenarios();
std::optional<ScenarioScript> find_builtin_scenario(std::string_view name);

// Everything a predicate may look at.
struct TrialRecord {
    std::vector<LogRecord> log;
    std::vector<StepRecord> steps;
    std::vector<WireDelivery> robot_wire;
    JointVector home{};
    bool settled = true;
    std::uint64_t ticks = 0;
};

struct TrialMetrics {
    std::size_t index = 0;
    std::uint64_t trial_seed = 0;
    bool success = false;
    bool watchdog = false;
    std::string failure;
    std::optional<std::int64_t> stop_latency_ticks;
    std::optional<std::int64_t> barge_in_latency_ms;
    std::optional<std::int64_t> action_gap_max_ticks;
    std::optional<std::int64_t> baseline_gap_ticks;
    std::optional<double> retraction_error_rad;
    std::uint64_t ticks = 0;
};

nlohmann::ordered_json to_json(const TrialMetrics& m);

// Per-check evaluation; `baseline_gap` is only read by the concurrency check.
TrialMetrics evaluate_trial(ScenarioCheck check, const TrialRecord& record,
                            std::optional<std::int64_t> baseline_gap = std::nullopt);

// Pose at the end of `tick` according to the step log.
JointVector pose_at(const std::vector<StepRecord>& steps, const JointVector& home, std::uint64_t tick);
// Largest run of idle ticks between consecutive steps from `first_tick` on,
// stopping at the first epoch change (the end of that task's motion).
std::int64_t max_gap_ticks(const std::vector<StepRecord>& steps, std::uint64_t first_tick);
// Recomputes stop latency from the robot wire and step log alone.
std::optional<std::int64_t> stop_latency_from_wire(const std::vector<WireDelivery>& wire,
                                                   const std::vector<StepRecord>& steps);

using TrialBackendFactory = std::function<std::unique_ptr<PolicyBackend>(const Clock&, std::uint64_t trial_seed,
                                                                          double fault_probability)>;

TrialBackendFactory scripted_backend_factory();

std::uint64_t trial_seed(std::uint64_t seed, std::size_t index);
std::vector<std::pair<std::uint64_t, std::string>> trial_schedule(const ScenarioScript& script, std::uint64_t trial_seed);

TrialRecord run_trial_record(const ScenarioScript& script, const std::vector<std::pair<std::uint64_t, std::string>>& schedule,
                             std::uint64_t trial_seed, const TrialBackendFactory& backend);
TrialMetrics run_trial(const ScenarioScript& script, std::size_t index, const TrialBackendFactory& backend);

struct LatencySummary {
    std::size_t count = 0;
    double mean = 0.0;
    double p95 = 0.0;
    double max = 0.0;
};

struct ScenarioReport {
    ScenarioScript script;
    std::vector<TrialMetrics> trials;
    std::size_t successes = 0;
    std::size_t watchdog_failures = 0;
    double success_rate = 0.0;
    bool threshold_met = false;
    LatencySummary stop_latency_ticks;
    LatencySummary barge_in_latency_ms;
    LatencySummary action_gap_max_ticks;
    LatencySummary retraction_error_rad;
};

ScenarioReport run_scenario(const ScenarioScript& script, const TrialBackendFactory& backend, std::size_t jobs = 1);

// Byte-stable for a given (script, backend config): no wall-clock fields.
nlohmann::ordered_json to_json(const ScenarioReport& report, bool include_trials);
std::string format_table(const std::vector<ScenarioReport>& reports);

} // namespace twincore
