#include "twincore/coordinator.hpp"
#include "twincore/harness.hpp"
#include "twincore/local_session.hpp"

#include <gtest/gtest.h>

#include <map>
#include <optional>
#include <set>
#include <tuple>

namespace twincore {
namespace {

using T = ControlToken;
using S = CoreState;
using R = CoreRole;
using M = InteractionMode;

BackendFactory scripted(double fault = 0.0, std::uint64_t seed = 0)
{
    return [=](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
        ScriptedConfig config;
        config.rules = builtin_rules(fault);
        config.seed = seed;
        return std::make_unique<ScriptedBackend>(clock, std::move(config));
    };
}

std::vector<LogRecord> events(const SessionLog& log, std::string_view name)
{
    std::vector<LogRecord> out;
    for (auto& r : log.records()) {
        if (r.event == name) {
            out.push_back(r);
        }
    }
    return out;
}

// Hand-enumerated: every (token, active-core state, routed role) triple.
TEST(ModeTable, MatchesAllThirtyTwoCases)
{
    const std::optional<M> none;
    const std::vector<std::tuple<T, S, R, std::optional<M>>> table{
        {T::res, S::hearing, R::active, M::voice_only},
        {T::res, S::hearing, R::standby, M::voice_only},
        {T::res, S::speaking, R::active, none},
        {T::res, S::speaking, R::standby, M::voice_interrupt},
        {T::res, S::acting, R::active, none},
        {T::res, S::acting, R::standby, M::concurrent_query},
        {T::res, S::retracting, R::active, none},
        {T::res, S::retracting, R::standby, M::concurrent_query},
        {T::act, S::hearing, R::active, M::start_action},
        {T::act, S::hearing, R::standby, M::start_action},
        {T::act, S::speaking, R::active, none},
        {T::act, S::speaking, R::standby, M::voice_interrupt},
        {T::act, S::acting, R::active, none},
        {T::act, S::acting, R::standby, M::action_switch},
        {T::act, S::retracting, R::active, none},
        {T::act, S::retracting, R::standby, M::action_switch},
        {T::halt, S::hearing, R::active, M::emergency_stop},
        {T::halt, S::hearing, R::standby, M::emergency_stop},
        {T::halt, S::speaking, R::active, none},
        {T::halt, S::speaking, R::standby, M::voice_interrupt},
        {T::halt, S::acting, R::active, none},
        {T::halt, S::acting, R::standby, M::emergency_stop},
        {T::halt, S::retracting, R::active, none},
        {T::halt, S::retracting, R::standby, M::emergency_stop},
        {T::end, S::hearing, R::active, none},
        {T::end, S::hearing, R::standby, none},
        {T::end, S::speaking, R::active, none},
        {T::end, S::speaking, R::standby, none},
        {T::end, S::acting, R::active, none},
        {T::end, S::acting, R::standby, none},
        {T::end, S::retracting, R::active, none},
        {T::end, S::retracting, R::standby, none},
    };
    ASSERT_EQ(table.size(), 32u);
    std::set<std::tuple<T, S, R>> seen;
    for (const auto& [token, state, role, expected] : table) {
        seen.insert({token, state, role});
        SCOPED_TRACE(std::string(to_string(token)) + "/" + std::string(to_string(state)) + "/" +
                     std::string(to_string(role)));
        if (expected) {
            EXPECT_EQ(resolve_interaction_mode(token, state, role), *expected);
        } else {
            EXPECT_THROW(resolve_interaction_mode(token, state, role), UnmappedCombination);
        }
    }
    EXPECT_EQ(seen.size(), 32u);
}

struct Direct {
    SimClock clock;
    SessionLog log;
    SceneFixture fixture = builtin_fixture();
    ScriptedBackend backend{clock, [] {
                                ScriptedConfig c;
                                c.rules = builtin_rules();
                                return c;
                            }()};
    Coordinator coordinator{clock, backend, fixture, log};
};

TEST(Coordinator, InitialRolesAndPermit)
{
    Direct d;
    EXPECT_EQ(d.coordinator.active_core(), 0);
    EXPECT_EQ(d.coordinator.permit_holder(), 1);
    EXPECT_EQ(d.coordinator.role(0), CoreRole::active);
    EXPECT_EQ(d.coordinator.role(1), CoreRole::standby);
    EXPECT_EQ(d.coordinator.epoch(), 0u);
    EXPECT_TRUE(d.coordinator.idle());
}

TEST(Coordinator, RoutesToHearingActiveAndReplacesLiveGeneration)
{
    Direct d;
    const auto first = d.coordinator.dispatch_user_event("Tell me a story.");
    EXPECT_EQ(first.core, 0);
    EXPECT_EQ(first.role, CoreRole::active);
    EXPECT_FALSE(first.replaced);
    const auto second = d.coordinator.dispatch_user_event("What do you see?");
    EXPECT_EQ(second.core, 0);
    EXPECT_TRUE(second.replaced);
}

TEST(Coordinator, RoutesToStandbyWhileActiveSpeaks)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Tell me a story.");
    s.run_tick();
    ASSERT_EQ(s.coordinator().state(0), CoreState::speaking);
    const auto r = s.coordinator().dispatch_user_event("What do you see?");
    EXPECT_EQ(r.core, 1);
    EXPECT_EQ(r.role, CoreRole::standby);
}

TEST(Coordinator, PreemptWithoutPermitThrows)
{
    Direct d;
    EXPECT_THROW(d.coordinator.preempt(0, 1, PreemptReason::halt, 0), PermitNotHeld);
    EXPECT_EQ(d.coordinator.epoch(), 0u);
}

TEST(Coordinator, StaleEpochPreemptIsNoOp)
{
    Direct d;
    const auto out = d.coordinator.preempt(1, 0, PreemptReason::halt, 7);
    EXPECT_FALSE(out.applied);
    EXPECT_EQ(d.coordinator.epoch(), 0u);
    EXPECT_EQ(events(d.log, "preempt_stale").size(), 1u);
    EXPECT_TRUE(events(d.log, "preempt").empty());
}

TEST(Coordinator, SwapWithNothingPendingFlipsRoles)
{
    Direct d;
    d.coordinator.swap_roles();
    EXPECT_EQ(d.coordinator.active_core(), 1);
    EXPECT_EQ(d.coordinator.permit_holder(), 0);
    EXPECT_EQ(d.coordinator.epoch(), 1u);
}

TEST(Coordinator, SwapDuringSpeechIsTeardownIncomplete)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Tell me a story.");
    s.run_tick();
    ASSERT_EQ(s.coordinator().state(0), CoreState::speaking);
    EXPECT_THROW(s.coordinator().swap_roles(), TeardownIncomplete);
    EXPECT_EQ(s.coordinator().active_core(), 0);
}

TEST(Coordinator, PickCanEventSequence)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Please pick up the can.");
    ASSERT_TRUE(s.run(1000));
    std::vector<std::string> seq;
    for (const auto& r : s.log().records()) {
        if (r.event != "speech_delta" && r.event != "chunk_sent" && r.event != "chunk_ack" &&
            r.event != "robot_motion") {
            seq.push_back(r.event);
        }
    }
    const std::vector<std::string> expected{
        "session_open", "utterance", "route", "generate", "control", "mode", "state", "finalized",
        "speech_end", "state", "task_pending", "state", "task_start", "task_outcome", "generate", "control",
        "task_end", "state", "finalized", "speech_end", "state",
    };
    EXPECT_EQ(seq, expected);
    const auto outcome = events(s.log(), "task_outcome").at(0);
    EXPECT_EQ(outcome.detail["outcome"], "completed");
    EXPECT_EQ(outcome.detail["chunks"], 8);
    EXPECT_EQ(events(s.log(), "chunk_sent").size(), 8u);
    EXPECT_TRUE(s.robot().scene().gripper_contents == std::optional<std::string>("can"));
    EXPECT_EQ(s.coordinator().state(0), CoreState::hearing);
}

TEST(Coordinator, EmergencyStopSwapsAndFreezes)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Please pick up the can.");
    s.schedule(50, "Stop!");
    ASSERT_TRUE(s.run(1000));
    const auto halts = events(s.log(), "halt_sent");
    ASSERT_EQ(halts.size(), 1u);
    EXPECT_EQ(halts[0].detail["halt_epoch"], 1);
    EXPECT_EQ(events(s.log(), "task_outcome").at(0).detail["outcome"], "halted");
    EXPECT_EQ(s.coordinator().active_core(), 1);
    EXPECT_FALSE(s.robot().state().moving);
    EXPECT_TRUE(events(s.log(), "task_start").size() == 1u);
}

TEST(Coordinator, RapidSwitchKeepsOnlyLatestTaskAndRetractsExactly)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Please pick up the can.");
    s.schedule(30, "Put the toy in the box instead.");
    s.schedule(36, "Wave hello.");
    ASSERT_TRUE(s.run(2000));
    const auto starts = events(s.log(), "task_start");
    ASSERT_EQ(starts.size(), 2u);
    EXPECT_EQ(starts[0].detail["task"], "pick_can");
    EXPECT_EQ(starts[1].detail["task"], "wave");
    EXPECT_EQ(events(s.log(), "task_dropped").size(), 1u);
    const auto done = events(s.log(), "retract_done");
    ASSERT_EQ(done.size(), 1u);
    const auto home = builtin_fixture().home;
    const auto pose = pose_at(s.robot().step_log(), home, done[0].detail["tick"].get<std::uint64_t>());
    EXPECT_LT(max_abs_diff(pose, home), 1e-6);
    const auto outcomes = events(s.log(), "task_outcome");
    ASSERT_EQ(outcomes.size(), 2u);
    EXPECT_EQ(outcomes[1].detail["outcome"], "completed");
}

TEST(Coordinator, CloseMidActionEndsWithHalt)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Please pick up the can.");
    for (int i = 0; i < 40; ++i) {
        s.run_tick();
    }
    ASSERT_TRUE(s.robot().state().moving);
    s.close();
    for (int i = 0; i < 5; ++i) {
        s.run_tick();
    }
    ASSERT_FALSE(s.robot_wire().empty());
    EXPECT_TRUE(std::holds_alternative<wire::Halt>(s.robot_wire().back().frame));
    EXPECT_FALSE(s.robot().state().moving);
    EXPECT_TRUE(s.coordinator().closed());
    EXPECT_THROW(s.coordinator().dispatch_user_event("hello"), SessionClosed);
    const auto before = s.log().size();
    s.coordinator().post_utterance("hello");
    s.run_tick();
    EXPECT_EQ(s.log().size(), before);
}

TEST(Coordinator, CloseBeforeAnyChunkSendsNoHalt)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "What do you see?");
    s.run_tick();
    s.close();
    s.run_tick();
    EXPECT_TRUE(s.robot_wire().empty());
}

TEST(Coordinator, QueryDuringActionDoesNotPauseIt)
{
    LocalSession s(builtin_fixture(), scripted());
    s.schedule(0, "Please pick up the can.");
    s.schedule(40, "Is the shelf tidy?");
    ASSERT_TRUE(s.run(1000));
    const auto modes = events(s.log(), "mode");
    ASSERT_EQ(modes.size(), 2u);
    EXPECT_EQ(modes[1].detail["mode"], "concurrent_query");
    EXPECT_EQ(*modes[1].core, 1);
    EXPECT_EQ(max_gap_ticks(s.robot().step_log(), 0), 0);
    EXPECT_EQ(events(s.log(), "task_outcome").at(0).detail["outcome"], "completed");
    EXPECT_EQ(events(s.log(), "preempt").size(), 0u);
}

// Invariants checked from the log over random utterance schedules.
TEST(CoordinatorProperty, LogInvariantsUnderRandomSchedules)
{
    const std::vector<std::string> pool{
        "Please pick up the can.", "Put the toy in the box instead.", "Wave hello.", "Stop!",
        "Tell me a story.",         "What do you see?",                "Is the shelf tidy?", "hmm",
    };
    for (std::uint64_t seed = 1; seed <= 60; ++seed) {
        SCOPED_TRACE(seed);
        SplitMix64 rng(seed);
        LocalSession s(builtin_fixture(), scripted(0.0, seed));
        const std::size_t n = 1 + rng.uniform_index(5);
        for (std::size_t i = 0; i < n; ++i) {
            s.schedule(rng.uniform_index(150), pool[rng.uniform_index(pool.size())]);
        }
        ASSERT_TRUE(s.run(5000));

        int active = 0;
        Epoch last_epoch = 0;
        std::map<int, std::string> state{{0, "hearing"}, {1, "hearing"}};
        std::set<int> muted;
        for (const auto& r : s.log().records()) {
            EXPECT_GE(r.epoch, last_epoch);
            last_epoch = r.epoch;
            if (r.event == "swap") {
                const int next = r.detail["active"].get<int>();
                EXPECT_EQ(next, 1 - active);
                active = next;
            }
            if (r.event == "permit") {
                EXPECT_EQ(r.detail["holder"].get<int>(), 1 - active);
            }
            if (r.event == "state") {
                EXPECT_EQ(r.detail["from"], state[*r.core]);
                state[*r.core] = r.detail["to"].get<std::string>();
                const auto busy = [&](int c) { return state[c] == "acting" || state[c] == "retracting"; };
                EXPECT_FALSE(busy(0) && busy(1));
            }
            if (r.event == "speech_end" && r.detail["reason"] == "interrupted") {
                muted.insert(*r.core);
            }
            if (r.event == "generate") {
                muted.erase(*r.core);
            }
            if (r.event == "speech_delta") {
                EXPECT_FALSE(muted.count(*r.core));
            }
        }
        Epoch fence = 0;
        bool fenced = false;
        for (const auto& d : s.robot_wire()) {
            if (const auto* h = std::get_if<wire::Halt>(&d.frame)) {
                fence = std::max(fence, h->epoch);
                fenced = true;
            }
            if (const auto* c = std::get_if<wire::Chunk>(&d.frame); c && fenced) {
                EXPECT_GE(c->chunk.epoch, fence);
            }
        }
        EXPECT_EQ(s.coordinator().active_core(), active);
        EXPECT_EQ(s.coordinator().permit_holder(), 1 - active);
    }
}

TEST(Coordinator, DeterministicLogBytes)
{
    auto run = [] {
        LocalSession s(builtin_fixture(), scripted());
        s.schedule(0, "Please pick up the can.");
        s.schedule(33, "Put the toy in the box instead.");
        s.run(2000);
        return s.log().to_jsonl();
    };
    EXPECT_EQ(run(), run());
}

} // namespace
} // namespace twincore
