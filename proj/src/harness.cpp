#include "twincore/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace twincore {

using Json = nlohmann::ordered_json;

std::string_view to_string(ScenarioCheck check)
{
    switch (check) {
    case ScenarioCheck::concurrency: return "concurrency";
    case ScenarioCheck::speech_interruption: return "speech_interruption";
    case ScenarioCheck::task_switching: return "task_switching";
    case ScenarioCheck::emergency_stop: return "emergency_stop";
    case ScenarioCheck::none: return "none";
    }
    return "?";
}

std::optional<ScenarioCheck> scenario_check_from_string(std::string_view name)
{
    for (auto c : {ScenarioCheck::concurrency, ScenarioCheck::speech_interruption, ScenarioCheck::task_switching,
                   ScenarioCheck::emergency_stop, ScenarioCheck::none}) {
        if (to_string(c) == name) {
            return c;
        }
    }
    return std::nullopt;
}

void validate(const ScenarioScript& s)
{
    if (s.name.empty()) {
        throw ScenarioInvalid("scenario needs a name");
    }
    if (s.events.empty()) {
        throw ScenarioInvalid("scenario " + s.name + " has no events");
    }
    for (const auto& e : s.events) {
        if (e.tick_max < e.tick_min) {
            throw ScenarioInvalid("event tick range is inverted in " + s.name);
        }
        if (e.text.empty()) {
            throw ScenarioInvalid("empty utterance in " + s.name);
        }
    }
    if (s.trials == 0) {
        throw ScenarioInvalid("trials must be positive");
    }
    if (!(s.fault_probability >= 0.0 && s.fault_probability <= 1.0)) {
        throw ScenarioInvalid("fault_probability must be in [0, 1]");
    }
    if (!(s.min_success_rate >= 0.0 && s.min_success_rate <= 1.0)) {
        throw ScenarioInvalid("min_success_rate must be in [0, 1]");
    }
    if (s.watchdog_ticks == 0) {
        throw ScenarioInvalid("watchdog_ticks must be positive");
    }
}

ScenarioScript scenario_from_json(const nlohmann::json& j)
{
    ScenarioScript s;
    try {
        s.name = j.at("name").get<std::string>();
        for (const auto& e : j.at("events")) {
            ScenarioEvent ev;
            ev.text = e.at("text").get<std::string>();
            if (e.contains("tick")) {
                ev.tick_min = ev.tick_max = e["tick"].get<std::uint64_t>();
            } else {
                ev.tick_min = e.at("tick_min").get<std::uint64_t>();
                ev.tick_max = e.at("tick_max").get<std::uint64_t>();
            }
            s.events.push_back(std::move(ev));
        }
        const auto check = scenario_check_from_string(j.value("check", std::string("none")));
        if (!check) {
            throw ScenarioInvalid("unknown check " + j.value("check", std::string()));
        }
        s.check = *check;
        s.trials = j.value("trials", s.trials);
        s.seed = j.value("seed", s.seed);
        s.fault_probability = j.value("fault_probability", s.fault_probability);
        s.min_success_rate = j.value("min_success_rate", s.min_success_rate);
        s.watchdog_ticks = j.value("watchdog_ticks", s.watchdog_ticks);
        s.settle_ticks = j.value("settle_ticks", s.settle_ticks);
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioInvalid(std::string("bad scenario file: ") + e.what());
    }
    validate(s);
    return s;
}

Json to_json(const ScenarioScript& s)
{
    Json events = Json::array();
    for (const auto& e : s.events) {
        events.push_back(Json{{"tick_min", e.tick_min}, {"tick_max", e.tick_max}, {"text", e.text}});
    }
    return Json{{"name", s.name},
                {"check", to_string(s.check)},
                {"events", std::move(events)},
                {"trials", s.trials},
                {"seed", s.seed},
                {"fault_probability", s.fault_probability},
                {"min_success_rate", s.min_success_rate},
                {"watchdog_ticks", s.watchdog_ticks},
                {"settle_ticks", s.settle_ticks}};
}

std::vector<ScenarioScript> builtin_scenarios()
{
    const std::string pick = "Please pick up the can.";
    std::vector<ScenarioScript> out;
    auto make = [&](std::string name, ScenarioCheck check, std::vector<ScenarioEvent> events) {
        ScenarioScript s;
        s.name = std::move(name);
        s.check = check;
        s.events = std::move(events);
        s.seed = 1;
        out.push_back(std::move(s));
    };
    make("concurrency", ScenarioCheck::concurrency, {{0, 0, pick}, {20, 60, "Is the shelf tidy?"}});
    make("emergency_stop", ScenarioCheck::emergency_stop, {{0, 0, pick}, {30, 80, "Stop!"}});
    make("speech_interruption", ScenarioCheck::speech_interruption,
         {{0, 0, "Tell me a story."}, {2, 7, "What do you see?"}});
    make("task_switching", ScenarioCheck::task_switching, {{0, 0, pick}, {20, 80, "Put the toy in the box instead."}});
    return out;
}

std::optional<ScenarioScript> find_builtin_scenario(std::string_view name)
{
    for (auto& s : builtin_scenarios()) {
        if (s.name == name) {
            return s;
        }
    }
    return std::nullopt;
}

JointVector pose_at(const std::vector<StepRecord>& steps, const JointVector& home, std::uint64_t tick)
{
    JointVector q = home;
    for (const auto& s : steps) {
        if (s.tick > tick) {
            break;
        }
        q = s.q;
    }
    return q;
}

std::int64_t max_gap_ticks(const std::vector<StepRecord>& steps, std::uint64_t first_tick)
{
    std::int64_t gap = 0;
    std::optional<StepRecord> prev;
    for (const auto& s : steps) {
        if (s.tick < first_tick) {
            continue;
        }
        if (prev) {
            if (s.epoch != prev->epoch) {
                break;
            }
            gap = std::max<std::int64_t>(gap, static_cast<std::int64_t>(s.tick - prev->tick) - 1);
        }
        prev = s;
    }
    return gap;
}

std::optional<std::int64_t> stop_latency_from_wire(const std::vector<WireDelivery>& wire,
                                                   const std::vector<StepRecord>& steps)
{
    for (const auto& d : wire) {
        const auto* halt = std::get_if<wire::Halt>(&d.frame);
        if (!halt) {
            continue;
        }
        // Halt is applied before the robot steps past d.tick.
        std::uint64_t t = d.tick + 1;
        for (const auto& s : steps) {
            if (s.tick < t || s.epoch >= halt->epoch) {
                continue;
            }
            if (s.tick == t) {
                ++t;
            }
        }
        return static_cast<std::int64_t>(t - d.tick);
    }
    return std::nullopt;
}

namespace {

struct LogView {
    const std::vector<LogRecord>& log;

    std::optional<std::size_t> find(std::string_view event, std::size_t from = 0,
                                    const std::function<bool(const LogRecord&)>& pred = {}) const
    {
        for (std::size_t i = from; i < log.size(); ++i) {
            if (log[i].event == event && (!pred || pred(log[i]))) {
                return i;
            }
        }
        return std::nullopt;
    }
};

bool fail(TrialMetrics& m, std::string why)
{
    m.success = false;
    m.failure = std::move(why);
    return false;
}

void check_emergency_stop(const TrialRecord& r, TrialMetrics& m)
{
    LogView v{r.log};
    const auto halt = v.find("halt_sent");
    if (!halt) {
        fail(m, "no halt sent");
        return;
    }
    const auto halt_tick = r.log[*halt].detail["tick"].get<std::uint64_t>();
    const auto halt_epoch = r.log[*halt].detail["halt_epoch"].get<Epoch>();

    std::optional<std::size_t> halt_frame;
    std::uint64_t delivered_at = 0;
    for (std::size_t i = 0; i < r.robot_wire.size(); ++i) {
        const auto* h = std::get_if<wire::Halt>(&r.robot_wire[i].frame);
        if (h && h->epoch == halt_epoch) {
            halt_frame = i;
            delivered_at = r.robot_wire[i].tick;
            break;
        }
    }
    if (!halt_frame) {
        fail(m, "halt never reached the robot");
        return;
    }
    for (std::size_t i = *halt_frame + 1; i < r.robot_wire.size(); ++i) {
        const auto* c = std::get_if<wire::Chunk>(&r.robot_wire[i].frame);
        if (c && c->chunk.epoch < halt_epoch) {
            fail(m, "stale chunk delivered after halt");
            return;
        }
    }
    std::int64_t after = 0;
    for (const auto& s : r.steps) {
        if (s.tick > delivered_at && s.epoch < halt_epoch) {
            ++after;
        }
    }
    if (after > 1) {
        fail(m, std::to_string(after) + " steps ran after halt");
        return;
    }
    const auto motion = v.find("robot_motion", *halt, [&](const LogRecord& rec) {
        return !rec.detail["moving"].get<bool>() && rec.detail["tick"].get<std::uint64_t>() > halt_tick;
    });
    if (motion) {
        m.stop_latency_ticks = static_cast<std::int64_t>(r.log[*motion].detail["tick"].get<std::uint64_t>() - halt_tick);
    }
    const auto outcome = v.find("task_outcome", *halt);
    if (!outcome || r.log[*outcome].detail["outcome"] != "halted") {
        fail(m, "task was not halted");
        return;
    }
    m.success = true;
}

void check_speech_interruption(const TrialRecord& r, TrialMetrics& m)
{
    LogView v{r.log};
    const auto cut = v.find("speech_end", 0, [](const LogRecord& rec) { return rec.detail["reason"] == "interrupted"; });
    if (!cut) {
        fail(m, "no interrupted speech");
        return;
    }
    const int cut_core = *r.log[*cut].core;
    std::optional<std::size_t> barge;
    for (std::size_t i = *cut; i-- > 0;) {
        if (r.log[i].event == "utterance") {
            barge = i;
            break;
        }
    }
    if (!barge) {
        fail(m, "no barge-in utterance");
        return;
    }
    m.barge_in_latency_ms = r.log[*cut].ts - r.log[*barge].ts;
    for (std::size_t i = *cut + 1; i < r.log.size(); ++i) {
        if (r.log[i].core == cut_core && r.log[i].event == "generate") {
            break;
        }
        if (r.log[i].core == cut_core && r.log[i].event == "speech_delta") {
            fail(m, "interrupted core kept speaking");
            return;
        }
    }
    bool spoke = false;
    for (std::size_t i = *barge + 1; i < r.log.size(); ++i) {
        const auto& rec = r.log[i];
        if (!rec.core || *rec.core == cut_core) {
            continue;
        }
        if (rec.event == "speech_delta") {
            spoke = true;
        }
        if (rec.event == "speech_end" && rec.detail["reason"] == "done" && spoke) {
            m.success = true;
            return;
        }
    }
    fail(m, "no new reply delivered");
}

void check_task_switching(const TrialRecord& r, TrialMetrics& m)
{
    LogView v{r.log};
    const auto a = v.find("task_start");
    if (!a) {
        fail(m, "task A never started");
        return;
    }
    const int a_core = *r.log[*a].core;
    const auto a_tick = r.log[*a].detail["tick"].get<std::uint64_t>();
    const auto a_out = v.find("task_outcome", *a, [&](const LogRecord& rec) { return rec.core == a_core; });
    if (!a_out || r.log[*a_out].detail["outcome"] != "preempted" || !r.log[*a_out].detail["retracted"].get<bool>()) {
        fail(m, "task A was not preempted with retraction");
        return;
    }
    const auto done = v.find("retract_done", *a_out);
    if (!done) {
        fail(m, "no retract_done");
        return;
    }
    const auto r_tick = r.log[*done].detail["tick"].get<std::uint64_t>();
    m.retraction_error_rad = max_abs_diff(pose_at(r.steps, r.home, r_tick), pose_at(r.steps, r.home, a_tick));
    if (*m.retraction_error_rad >= 1e-6) {
        fail(m, "retraction missed the pre-task pose");
        return;
    }
    const auto b = v.find("task_start", *a + 1);
    if (!b) {
        fail(m, "task B never started");
        return;
    }
    const int b_core = *r.log[*b].core;
    const auto b_out = v.find("task_outcome", *b, [&](const LogRecord& rec) { return rec.core == b_core; });
    if (!b_out || r.log[*b_out].detail["outcome"] != "completed") {
        fail(m, "task B did not complete");
        return;
    }
    m.success = true;
}

void check_concurrency(const TrialRecord& r, TrialMetrics& m, std::optional<std::int64_t> baseline)
{
    LogView v{r.log};
    const auto a = v.find("task_start");
    if (!a) {
        fail(m, "task never started");
        return;
    }
    const int a_core = *r.log[*a].core;
    const auto a_tick = r.log[*a].detail["tick"].get<std::uint64_t>();
    const auto query = v.find("mode", *a, [](const LogRecord& rec) { return rec.detail["mode"] == "concurrent_query"; });
    if (!query) {
        fail(m, "query was not handled concurrently");
        return;
    }
    const int q_core = *r.log[*query].core;
    const auto answered = v.find("speech_end", *query, [&](const LogRecord& rec) { return rec.core == q_core; });
    const auto outcome = v.find("task_outcome", *a, [&](const LogRecord& rec) { return rec.core == a_core; });
    m.action_gap_max_ticks = max_gap_ticks(r.steps, a_tick);
    m.baseline_gap_ticks = baseline;
    if (!answered || r.log[*answered].detail["reason"] != "done") {
        fail(m, "query was not answered");
        return;
    }
    if (!outcome || r.log[*outcome].detail["outcome"] != "completed") {
        fail(m, "action did not complete");
        return;
    }
    if (*answered > *outcome) {
        fail(m, "answer finished after the action");
        return;
    }
    if (*m.action_gap_max_ticks > baseline.value_or(0) + 1) {
        fail(m, "action stream paused");
        return;
    }
    m.success = true;
}

LatencySummary summarize(std::vector<double> values)
{
    LatencySummary s;
    s.count = values.size();
    if (values.empty()) {
        return s;
    }
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double x : values) {
        sum += x;
    }
    s.mean = sum / static_cast<double>(values.size());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(values.size())));
    s.p95 = values[std::max<std::size_t>(rank, 1) - 1];
    s.max = values.back();
    return s;
}

Json to_json(const LatencySummary& s)
{
    return Json{{"count", s.count}, {"mean", s.mean}, {"p95", s.p95}, {"max", s.max}};
}

} // namespace

TrialMetrics evaluate_trial(ScenarioCheck check, const TrialRecord& record, std::optional<std::int64_t> baseline_gap)
{
    TrialMetrics m;
    m.ticks = record.ticks;
    if (!record.settled) {
        m.watchdog = true;
    }
    switch (check) {
    case ScenarioCheck::emergency_stop: check_emergency_stop(record, m); break;
    case ScenarioCheck::speech_interruption: check_speech_interruption(record, m); break;
    case ScenarioCheck::task_switching: check_task_switching(record, m); break;
    case ScenarioCheck::concurrency: check_concurrency(record, m, baseline_gap); break;
    case ScenarioCheck::none: m.success = true; break;
    }
    if (m.watchdog) {
        fail(m, "watchdog: no quiescence within tick budget");
    }
    return m;
}

Json to_json(const TrialMetrics& m)
{
    Json j{{"index", m.index}, {"trial_seed", m.trial_seed}, {"success", m.success}, {"ticks", m.ticks}};
    if (m.watchdog) {
        j["watchdog"] = true;
    }
    if (!m.failure.empty()) {
        j["failure"] = m.failure;
    }
    if (m.stop_latency_ticks) {
        j["stop_latency_ticks"] = *m.stop_latency_ticks;
    }
    if (m.barge_in_latency_ms) {
        j["barge_in_latency_ms"] = *m.barge_in_latency_ms;
    }
    if (m.action_gap_max_ticks) {
        j["action_gap_max_ticks"] = *m.action_gap_max_ticks;
    }
    if (m.baseline_gap_ticks) {
        j["baseline_gap_ticks"] = *m.baseline_gap_ticks;
    }
    if (m.retraction_error_rad) {
        j["retraction_error_rad"] = *m.retraction_error_rad;
    }
    return j;
}

TrialBackendFactory scripted_backend_factory()
{
    return [](const Clock& clock, std::uint64_t seed, double fault) -> std::unique_ptr<PolicyBackend> {
        ScriptedConfig config;
        config.rules = builtin_rules(fault);
        config.seed = seed;
        return std::make_unique<ScriptedBackend>(clock, std::move(config));
    };
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t index)
{
    return mix64(seed + index);
}

std::vector<std::pair<std::uint64_t, std::string>> trial_schedule(const ScenarioScript& script, std::uint64_t seed)
{
    SplitMix64 rng(seed);
    std::vector<std::pair<std::uint64_t, std::string>> out;
    for (const auto& e : script.events) {
        out.emplace_back(e.tick_min + rng.uniform_index(e.tick_max - e.tick_min + 1), e.text);
    }
    return out;
}

TrialRecord run_trial_record(const ScenarioScript& script,
                             const std::vector<std::pair<std::uint64_t, std::string>>& schedule, std::uint64_t seed,
                             const TrialBackendFactory& backend)
{
    const double fault = script.fault_probability;
    LocalSession session(builtin_fixture(), [&](const Clock& clock) { return backend(clock, seed, fault); });
    for (const auto& [tick, text] : schedule) {
        session.schedule(tick, text);
    }
    TrialRecord r;
    r.settled = session.run(script.watchdog_ticks, script.settle_ticks);
    r.ticks = session.tick();
    r.log = session.log().records();
    r.steps = session.robot().step_log();
    r.robot_wire = session.robot_wire();
    r.home = builtin_fixture().home;
    return r;
}

TrialMetrics run_trial(const ScenarioScript& script, std::size_t index, const TrialBackendFactory& backend)
{
    const auto seed = trial_seed(script.seed, index);
    const auto schedule = trial_schedule(script, seed);
    std::optional<std::int64_t> baseline;
    if (script.check == ScenarioCheck::concurrency) {
        // Same task, no query.
        const auto base = run_trial_record(script, {schedule.front()}, seed, backend);
        const auto start = LogView{base.log}.find("task_start");
        baseline = max_gap_ticks(base.steps, start ? base.log[*start].detail["tick"].get<std::uint64_t>() : 0);
    }
    auto m = evaluate_trial(script.check, run_trial_record(script, schedule, seed, backend), baseline);
    m.index = index;
    m.trial_seed = seed;
    return m;
}

ScenarioReport run_scenario(const ScenarioScript& script, const TrialBackendFactory& backend, std::size_t jobs)
{
    validate(script);
    ScenarioReport report;
    report.script = script;
    report.trials.resize(script.trials);
    jobs = std::max<std::size_t>(1, std::min(jobs, script.trials));
    if (jobs == 1) {
        for (std::size_t i = 0; i < script.trials; ++i) {
            report.trials[i] = run_trial(script, i, backend);
        }
    } else {
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t i = w; i < script.trials; i += jobs) {
                    report.trials[i] = run_trial(script, i, backend);
                }
            });
        }
        for (auto& t : workers) {
            t.join();
        }
    }
    std::vector<double> stop, barge, gap, retract;
    for (const auto& t : report.trials) {
        report.successes += t.success ? 1 : 0;
        report.watchdog_failures += t.watchdog ? 1 : 0;
        if (t.stop_latency_ticks) {
            stop.push_back(static_cast<double>(*t.stop_latency_ticks));
        }
        if (t.barge_in_latency_ms) {
            barge.push_back(static_cast<double>(*t.barge_in_latency_ms));
        }
        if (t.action_gap_max_ticks) {
            gap.push_back(static_cast<double>(*t.action_gap_max_ticks));
        }
        if (t.retraction_error_rad) {
            retract.push_back(*t.retraction_error_rad);
        }
    }
    report.success_rate = static_cast<double>(report.successes) / static_cast<double>(script.trials);
    report.threshold_met = report.success_rate >= script.min_success_rate;
    report.stop_latency_ticks = summarize(stop);
    report.barge_in_latency_ms = summarize(barge);
    report.action_gap_max_ticks = summarize(gap);
    report.retraction_error_rad = summarize(retract);
    return report;
}

Json to_json(const ScenarioReport& r, bool include_trials)
{
    Json failed = Json::array();
    for (const auto& t : r.trials) {
        if (!t.success) {
            failed.push_back(Json{{"index", t.index}, {"failure", t.failure}});
        }
    }
    Json j{{"scenario", r.script.name},
           {"check", to_string(r.script.check)},
           {"trials", r.script.trials},
           {"seed", r.script.seed},
           {"fault_probability", r.script.fault_probability},
           {"successes", r.successes},
           {"success_rate", r.success_rate},
           {"min_success_rate", r.script.min_success_rate},
           {"threshold_met", r.threshold_met},
           {"watchdog_failures", r.watchdog_failures},
           {"metrics",
            Json{{"stop_latency_ticks", to_json(r.stop_latency_ticks)},
                 {"barge_in_latency_ms", to_json(r.barge_in_latency_ms)},
                 {"action_gap_max_ticks", to_json(r.action_gap_max_ticks)},
                 {"retraction_error_rad", to_json(r.retraction_error_rad)}}},
           {"failed_trials", std::move(failed)}};
    if (include_trials) {
        Json trials = Json::array();
        for (const auto& t : r.trials) {
            trials.push_back(to_json(t));
        }
        j["trial_results"] = std::move(trials);
    }
    return j;
}

std::string format_table(const std::vector<ScenarioReport>& reports)
{
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s %7s %8s %8s %10s %10s %8s %12s\n", "scenario", "trials", "success", "rate",
                  "stop(t)", "barge(ms)", "gap(t)", "retract(rad)");
    out << line;
    const auto cell = [](const LatencySummary& s, const char* fmt) {
        char buf[32];
        if (s.count == 0) {
            return std::string("-");
        }
        std::snprintf(buf, sizeof buf, fmt, s.mean);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%-22s %7zu %8zu %8.3f %10s %10s %8s %12s\n", r.script.name.c_str(),
                      r.script.trials, r.successes, r.success_rate, cell(r.stop_latency_ticks, "%.2f").c_str(),
                      cell(r.barge_in_latency_ms, "%.1f").c_str(), cell(r.action_gap_max_ticks, "%.2f").c_str(),
                      cell(r.retraction_error_rad, "%.1e").c_str());
        out << line;
    }
    return out.str();
}

} // namespace twincore
