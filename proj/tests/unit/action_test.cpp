#include "twincore/action.hpp"
#include "twincore/random.hpp"
#include "twincore/robot_sim.hpp"

#include <gtest/gtest.h>

namespace twincore {
namespace {

const TaskSpec& task(const char* name)
{
    return *builtin_fixture().find_task(name);
}

// Closed-form end pose of the pick schedule: last phase goals, inherited.
JointVector pick_goal()
{
    JointVector q{};
    q[7] = 0.6;
    q[10] = 1.5;
    q[20] = 0.8;
    q[8] = 0.8;
    return q;
}

TEST(ActionLoop, PickCanCompletes)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("pick_can"));
    std::atomic<bool> stop{false};
    const auto outcome = run_action_loop(expert, "Pick up the can.", sim, stop, StopMode::halt_on_stop);
    EXPECT_EQ(outcome.kind, TaskOutcome::Kind::completed);
    EXPECT_EQ(outcome.chunks_executed, 8u);
    EXPECT_LE(max_abs_diff(outcome.final_pose, pick_goal()), 1e-9);
    EXPECT_EQ(sim.scene().gripper_contents, "can");
}

TEST(ActionLoop, HaltDuringThirdChunkFreezesAtLastAck)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("pick_can"));
    std::atomic<bool> stop{false};
    // Chunk 3 covers ticks 33..48.
    const auto outcome = run_action_loop(expert, "Pick up the can.", sim, stop, StopMode::halt_on_stop,
                                         [&](std::uint64_t tick) { stop = tick >= 40; });
    EXPECT_EQ(outcome.kind, TaskOutcome::Kind::halted);
    EXPECT_EQ(outcome.chunks_executed, 3u);
    const auto& log = sim.step_log();
    ASSERT_FALSE(log.empty());
    EXPECT_EQ(log.back().tick, 40u);
    EXPECT_EQ(outcome.final_pose, log.back().q);
    for (int i = 0; i < 5; ++i) {
        sim.step();
    }
    EXPECT_EQ(sim.state().q, log.back().q);
}

TEST(ActionLoop, RetractReturnsToStart)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("toy_in_box"));
    std::atomic<bool> stop{false};
    const auto outcome = run_action_loop(expert, "Pick up toy and place in box.", sim, stop,
                                         StopMode::retract_on_stop, [&](std::uint64_t tick) { stop = tick >= 101; });
    EXPECT_EQ(outcome.kind, TaskOutcome::Kind::preempted);
    EXPECT_TRUE(outcome.retracted);
    EXPECT_LE(max_abs_diff(outcome.final_pose, builtin_fixture().home), 1e-6);
    EXPECT_EQ(sim.state().q, builtin_fixture().home);
    EXPECT_FALSE(sim.scene().gripper_contents);
}

TEST(Retraction, SingleFullChunkReversed)
{
    ActionStackEntry e;
    JointVector q0{};
    e.start_pose = q0;
    for (int i = 1; i <= 16; ++i) {
        JointVector q{};
        q[3] = 0.01 * i;
        e.executed.push_back(q);
    }
    const auto chunks = compute_retraction(e);
    ASSERT_EQ(chunks.size(), 1u);
    ASSERT_EQ(chunks[0].steps.size(), 16u);
    for (int i = 0; i < 15; ++i) {
        EXPECT_EQ(chunks[0].steps[i], e.executed[14 - i]);
    }
    EXPECT_EQ(chunks[0].steps.back(), q0);
}

TEST(Retraction, PrefixOfFiveSteps)
{
    ActionStackEntry e;
    for (int i = 1; i <= 5; ++i) {
        JointVector q{};
        q[0] = i;
        e.executed.push_back(q);
    }
    const auto chunks = compute_retraction(std::vector<ActionStackEntry>{e});
    ASSERT_EQ(chunks.size(), 1u);
    EXPECT_EQ(chunks[0].steps.size(), 5u);
    EXPECT_EQ(chunks[0].steps[0][0], 4.0);
    EXPECT_EQ(chunks[0].steps[3][0], 1.0);
    EXPECT_EQ(chunks[0].steps[4][0], 0.0);
}

TEST(Retraction, EmptyStackThrows)
{
    EXPECT_THROW(compute_retraction(std::vector<ActionStackEntry>{}), EmptyStack);
}

JointVector random_step(SplitMix64& rng, const JointVector& from)
{
    JointVector q = from;
    for (auto& v : q) {
        v += (rng.uniform01() * 2 - 1) * 0.05;
    }
    return q;
}

// Random 4-entry stacks with random executed prefixes: executing the
// inverse chunks in the simulator lands on the first start pose.
TEST(Retraction, RandomStacksReturnToStartInSimulator)
{
    SplitMix64 rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<ActionStackEntry> stack;
        JointVector q{};
        for (auto& v : q) {
            v = rng.uniform01() - 0.5;
        }
        SceneFixture fixture = builtin_fixture();
        fixture.home = q;
        RobotSim sim(fixture);
        for (int k = 0; k < 4; ++k) {
            ActionStackEntry e;
            e.start_pose = sim.state().q;
            ActionChunk c;
            JointVector p = e.start_pose;
            for (std::size_t i = 0; i < kChunkSteps; ++i) {
                p = random_step(rng, p);
                c.steps.push_back(p);
            }
            const auto executed = 1 + rng.uniform_index(kChunkSteps);
            sim.enqueue_chunk(c);
            for (std::size_t i = 0; i < executed; ++i) {
                sim.step();
            }
            sim.halt(0);
            e.executed.assign(c.steps.begin(), c.steps.begin() + static_cast<std::ptrdiff_t>(executed));
            stack.push_back(e);
        }
        for (const auto& c : compute_retraction(stack)) {
            sim.enqueue_chunk(c);
            for (std::size_t i = 0; i < c.steps.size(); ++i) {
                sim.step();
            }
        }
        ASSERT_LE(max_abs_diff(sim.state().q, q), 1e-6);
    }
}

// Property: any scripted task, any interruption tick, any reachable start
// pose: execute-then-retract returns every joint within 1e-6, the stack is
// drained, steps never jump more than max_step, and at most one step runs
// after the stop is raised.
TEST(ActionLoop, RetractionInverseProperty)
{
    SplitMix64 rng(31337);
    const auto& f = builtin_fixture();
    for (int trial = 0; trial < 400; ++trial) {
        SceneFixture fixture = f;
        // Start from somewhere along another task's path.
        const auto& pre = f.tasks[rng.uniform_index(f.tasks.size())];
        const auto pre_path = plan_trajectory(pre, f.home, f.expert_speed);
        fixture.home = pre_path[rng.uniform_index(pre_path.size())];
        RobotSim sim(fixture);
        const JointVector start = sim.state().q;
        const auto& t = f.tasks[rng.uniform_index(f.tasks.size())];
        ScriptedExpert expert(fixture, t);
        const auto stop_tick = 1 + rng.uniform_index(200);
        std::atomic<bool> stop{false};
        std::uint64_t raised_at = 0;
        std::uint64_t stepped_after = 0;
        std::size_t log_at_raise = 0;
        const auto outcome = run_action_loop(expert, "task", sim, stop, StopMode::retract_on_stop, [&](std::uint64_t tick) {
            if (!stop && tick >= stop_tick) {
                stop = true;
                raised_at = tick;
                log_at_raise = sim.step_log().size();
            }
        });
        if (outcome.kind == TaskOutcome::Kind::completed) {
            continue;
        }
        ASSERT_EQ(outcome.kind, TaskOutcome::Kind::preempted);
        ASSERT_LE(max_abs_diff(sim.state().q, start), 1e-6) << "trial " << trial;
        // Steps of the interrupted task that ran after the stop was raised.
        for (std::size_t i = log_at_raise; i < sim.step_log().size(); ++i) {
            const auto& s = sim.step_log()[i];
            if (s.epoch == 0 && s.tick > raised_at) {
                ++stepped_after;
            }
        }
        ASSERT_LE(stepped_after, 1u);
        JointVector prev = start;
        for (const auto& s : sim.step_log()) {
            ASSERT_LE(max_abs_diff(prev, s.q), kMaxStepRad + 1e-12);
            prev = s.q;
        }
    }
}

class RecordingChannel : public RobotChannel {
public:
    void send_chunk(const ActionChunk& c) override { chunks.push_back(c); }
    void send_halt(Epoch e) override { halts.push_back(e); }
    std::vector<ActionChunk> chunks;
    std::vector<Epoch> halts;
};

TEST(ActionLoop, StackDisciplineLifo)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("pick_can"));
    RecordingChannel ch;
    std::uint64_t ids = 1;
    ActionLoop loop(expert, "Pick up the can.", ch, 0, ids);
    loop.start(sim.observe(), sim.state());
    for (int k = 0; k < 3; ++k) {
        JointVector q = ch.chunks.back().steps.back();
        RobotState s{q, 0, true};
        loop.on_ack({ch.chunks.back().chunk_id, 16}, sim.observe(), s);
    }
    ASSERT_EQ(loop.stack().size(), 3u);
    const auto ids_pushed = std::vector<std::uint64_t>{loop.stack().entries()[0].chunk_id,
                                                       loop.stack().entries()[1].chunk_id,
                                                       loop.stack().entries()[2].chunk_id};
    loop.stop(StopMode::retract_on_stop, 1);
    ASSERT_EQ(ch.halts, std::vector<Epoch>{1});
    loop.on_ack({ch.chunks.back().chunk_id, 4}, sim.observe(), RobotState{ch.chunks.back().steps[3], 0, false});
    // Entry for the partial chunk is on top; its inverse goes first.
    ASSERT_EQ(loop.stack().size(), 3u);
    EXPECT_EQ(ch.chunks.back().steps.size(), 4u);
    EXPECT_EQ(ch.chunks.back().epoch, 1u);
    std::vector<std::uint64_t> popped_order;
    while (!loop.finished()) {
        const auto& c = ch.chunks.back();
        loop.on_ack({c.chunk_id, static_cast<std::uint32_t>(c.steps.size())}, sim.observe(),
                    RobotState{c.steps.back(), 0, false});
        popped_order.push_back(loop.stack().size());
    }
    EXPECT_TRUE(loop.stack().empty());
    EXPECT_EQ(popped_order, (std::vector<std::uint64_t>{2, 1, 0, 0}));
    EXPECT_EQ(loop.outcome().final_pose, builtin_fixture().home);
    (void)ids_pushed;
}

TEST(ActionLoop, EmergencyStopDuringRetractionHalts)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("pick_can"));
    RecordingChannel ch;
    std::uint64_t ids = 1;
    ActionLoop loop(expert, "Pick up the can.", ch, 0, ids);
    loop.start(sim.observe(), sim.state());
    loop.on_ack({ch.chunks.back().chunk_id, 16}, sim.observe(), RobotState{ch.chunks.back().steps.back(), 0, true});
    loop.stop(StopMode::retract_on_stop, 1);
    loop.on_ack({ch.chunks.back().chunk_id, 2}, sim.observe(), RobotState{ch.chunks.back().steps[1], 0, false});
    ASSERT_TRUE(loop.retracting());
    loop.stop(StopMode::halt_on_stop, 2);
    EXPECT_EQ(ch.halts, (std::vector<Epoch>{1, 2}));
    loop.on_ack({ch.chunks.back().chunk_id, 1}, sim.observe(), RobotState{ch.chunks.back().steps[0], 0, false});
    ASSERT_TRUE(loop.finished());
    EXPECT_EQ(loop.outcome().kind, TaskOutcome::Kind::halted);
    EXPECT_FALSE(loop.outcome().retracted);
}

TEST(ActionLoop, StaleAckIgnored)
{
    RobotSim sim(builtin_fixture());
    ScriptedExpert expert(builtin_fixture(), task("pick_can"));
    RecordingChannel ch;
    std::uint64_t ids = 10;
    ActionLoop loop(expert, "Pick up the can.", ch, 0, ids);
    loop.start(sim.observe(), sim.state());
    loop.on_ack({3, 16}, sim.observe(), sim.state());
    EXPECT_EQ(ch.chunks.size(), 1u);
    EXPECT_TRUE(loop.stack().empty());
}

class JumpyExpert : public ActionExpert {
public:
    std::vector<JointVector> next_chunk(const ConditioningPayload&, const RobotState& s) override
    {
        std::vector<JointVector> steps(kChunkSteps, s.q);
        for (auto& q : steps) {
            q[0] += 1.0;
        }
        return steps;
    }
    bool is_done(const SceneSnapshot&, const RobotState& s) const override { return s.q[0] > 0.5; }
};

TEST(ActionLoop, OversizedStepsAreClamped)
{
    RobotSim sim(builtin_fixture());
    JumpyExpert expert;
    std::atomic<bool> stop{false};
    int warnings = 0;
    LoopOptions opts;
    opts.warn = [&](const std::string&) { ++warnings; };
    const auto outcome = run_action_loop(expert, "jump", sim, stop, StopMode::halt_on_stop, {}, opts);
    EXPECT_EQ(outcome.kind, TaskOutcome::Kind::completed);
    EXPECT_GE(warnings, 1);
    JointVector prev{};
    for (const auto& s : sim.step_log()) {
        EXPECT_LE(max_abs_diff(prev, s.q), kMaxStepRad + 1e-12);
        prev = s.q;
    }
}

TEST(ActionStack, CompactionKeepsRetractionExact)
{
    ActionStack stack(8);
    SplitMix64 rng(3);
    JointVector start{};
    JointVector q = start;
    for (int k = 0; k < 40; ++k) {
        ActionStackEntry e;
        e.start_pose = q;
        const auto n = 1 + rng.uniform_index(kChunkSteps);
        for (std::size_t i = 0; i < n; ++i) {
            q = random_step(rng, q);
            e.executed.push_back(q);
        }
        stack.push(e);
        ASSERT_LE(stack.size(), 8u);
    }
    EXPECT_TRUE(stack.entries().front().synthetic);
    RobotSim sim(builtin_fixture());
    SceneFixture f = builtin_fixture();
    f.home = q;
    RobotSim sim2(f);
    for (const auto& c : compute_retraction(stack.entries())) {
        sim2.enqueue_chunk(c);
        for (std::size_t i = 0; i < c.steps.size(); ++i) {
            sim2.step();
        }
    }
    EXPECT_LE(max_abs_diff(sim2.state().q, start), 1e-12);
    JointVector prev = q;
    for (const auto& s : sim2.step_log()) {
        EXPECT_LE(max_abs_diff(prev, s.q), kMaxStepRad + 1e-12);
        prev = s.q;
    }
}

TEST(ScriptedExpert, TrajectoryLengthsFromSchedule)
{
    const auto& f = builtin_fixture();
    EXPECT_EQ(plan_trajectory(task("pick_can"), f.home, f.expert_speed).size(), 60u + 32u + 32u);
    EXPECT_EQ(plan_trajectory(task("toy_in_box"), f.home, f.expert_speed).size(), 48u + 32u + 20u + 52u + 32u + 48u);
}

TEST(ScriptedExpert, DeterministicChunks)
{
    const auto& f = builtin_fixture();
    ScriptedExpert a(f, task("wave"));
    ScriptedExpert b(f, task("wave"));
    RobotState s{f.home, 0, false};
    Observation o;
    const auto ca = a.next_chunk(derive_conditioning("wave", o), s);
    EXPECT_EQ(ca, b.next_chunk(derive_conditioning("wave", o), s));
    s.q = ca.back();
    EXPECT_EQ(a.next_chunk(derive_conditioning("wave", o), s), b.next_chunk(derive_conditioning("wave", o), s));
}

} // namespace
} // namespace twincore
