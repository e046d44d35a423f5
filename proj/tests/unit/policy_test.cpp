#include "twincore/policy.hpp"
#include "twincore/task.hpp"

#include <gtest/gtest.h>

#include <set>

namespace twincore {
namespace {

PolicyRequest request(std::string utterance)
{
    PolicyRequest r;
    r.observation.scene = builtin_fixture().initial_scene;
    r.utterance = std::move(utterance);
    return r;
}

std::string drain(GenerationHandle& h, SimClock& clock, std::vector<std::string>* fragments = nullptr)
{
    std::string out;
    for (int i = 0; i < 10000 && h.status() == GenerationStatus::live; ++i) {
        clock.advance(10);
        for (auto& f : h.poll()) {
            out += f;
            if (fragments) {
                fragments->push_back(f);
            }
        }
    }
    return out;
}

class ScriptedBackendTest : public ::testing::Test {
protected:
    SimClock clock;
    ScriptedBackend backend{clock, ScriptedConfig{builtin_rules(), 1, 8, 20, {}}};
};

TEST_F(ScriptedBackendTest, StopUtterance)
{
    auto h = backend.generate(request("Stop!"));
    EXPECT_EQ(drain(*h, clock), "[HALT] Stopping immediately.");
    EXPECT_EQ(h->status(), GenerationStatus::completed);
}

TEST_F(ScriptedBackendTest, DescribeSingleApple)
{
    auto r = request("What do you see?");
    r.observation.scene.objects.clear();
    r.observation.scene.objects["apple"] = SceneObject{"apple", {0.3, 0.0, 0.0}, std::nullopt, false};
    auto h = backend.generate(r);
    EXPECT_EQ(drain(*h, clock), "[RES] I see an apple on the table.");
}

TEST_F(ScriptedBackendTest, DescribeSkipsHeldAndContainedObjects)
{
    auto r = request("What do you see?");
    r.observation.scene.gripper_contents = "can";
    r.observation.scene.objects.at("toy").container = "box";
    EXPECT_EQ(backend.respond(r, false), "[RES] I see an apple on the table.");
}

TEST_F(ScriptedBackendTest, ToyInBoxAction)
{
    auto h = backend.generate(request("put the toy in the box"));
    EXPECT_EQ(drain(*h, clock), "[ACT] Okay, I will put the toy in the box. [INST] Pick up toy and place in box.");
}

TEST_F(ScriptedBackendTest, TaskCompleteGivesEnd)
{
    auto r = request("Pick up the can.");
    r.observation.task_complete = true;
    auto h = backend.generate(r);
    EXPECT_EQ(drain(*h, clock), "[END] The action is finished.");
}

TEST_F(ScriptedBackendTest, FragmentsRespectSizeAndCadence)
{
    const std::int64_t t0 = clock.now_ms();
    auto h = backend.generate(request("Tell me a story."));
    clock.advance(19);
    EXPECT_TRUE(h->poll().empty());
    clock.advance(1);
    const auto first = h->poll();
    ASSERT_EQ(first.size(), 1u);
    EXPECT_EQ(first[0], "[RES] On");
    std::vector<std::string> rest;
    drain(*h, clock, &rest);
    for (const auto& f : rest) {
        EXPECT_LE(f.size(), 8u);
    }
    EXPECT_GT(clock.now_ms() - t0, static_cast<std::int64_t>(20 * rest.size()));
}

TEST_F(ScriptedBackendTest, CancelStopsDelivery)
{
    auto h = backend.generate(request("Tell me a story."));
    clock.advance(60);
    EXPECT_EQ(h->poll().size(), 3u);
    EXPECT_EQ(h->cancel(), GenerationStatus::cancelled);
    clock.advance(1000);
    EXPECT_TRUE(h->poll().empty());
    EXPECT_EQ(h->cancel(), GenerationStatus::cancelled);
}

TEST_F(ScriptedBackendTest, CancelAfterCompletionKeepsCompleted)
{
    auto h = backend.generate(request("Stop!"));
    drain(*h, clock);
    EXPECT_EQ(h->cancel(), GenerationStatus::completed);
    EXPECT_EQ(h->status(), GenerationStatus::completed);
}

TEST_F(ScriptedBackendTest, EveryOutputParsesStrict)
{
    const std::vector<std::string> utterances{
        "Stop!", "halt now", "What do you see?", "Please pick up the can.", "Put the toy in the box instead.",
        "Can you wave?", "Tell me a story.", "Is the shelf tidy?", "hello", "¿qué ves?", "FREEZE", "abort mission"};
    for (const auto& u : utterances) {
        for (bool moving : {false, true}) {
            auto r = request(u);
            r.robot_state.moving = moving;
            for (bool fault : {false, true}) {
                EXPECT_NO_THROW(parse_structured_output(backend.respond(r, fault), ParseMode::strict)) << u;
            }
        }
    }
}

TEST(ScriptedBackend, DeterministicFragmentsWithoutFaults)
{
    const auto run = [] {
        SimClock clock;
        ScriptedBackend b(clock, ScriptedConfig{builtin_rules(), 5, 8, 20, {}});
        std::vector<std::string> fragments;
        auto h = b.generate(request("Tell me a story."));
        drain(*h, clock, &fragments);
        return fragments;
    };
    EXPECT_EQ(run(), run());
}

TEST(ScriptedBackend, FaultRateMatchesProbability)
{
    SimClock clock;
    ScriptedBackend b(clock, ScriptedConfig{builtin_rules(0.067), 2024, 8, 20, {}});
    const int n = 20000;
    int misread = 0;
    for (int i = 0; i < n; ++i) {
        auto r = request("Put the toy in the box instead.");
        r.robot_state.moving = true;
        auto h = b.generate(r);
        std::string out = drain(*h, clock);
        misread += parse_structured_output(out).control == ControlToken::res ? 1 : 0;
    }
    const double p = 0.067;
    const double sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(static_cast<double>(misread) / n, p, 4 * sigma);
    EXPECT_EQ(b.faults_injected(), static_cast<std::uint64_t>(misread));
    EXPECT_EQ(b.fault_opportunities(), static_cast<std::uint64_t>(n));
}

TEST(ScriptedBackend, NoFaultWhenRobotIdle)
{
    SimClock clock;
    ScriptedBackend b(clock, ScriptedConfig{builtin_rules(1.0), 1, 8, 20, {}});
    auto h = b.generate(request("Pick up the can."));
    EXPECT_EQ(parse_structured_output(drain(*h, clock)).control, ControlToken::act);
}

TEST(ScriptedBackend, RuleSetNeedsFallback)
{
    SimClock clock;
    auto rules = builtin_rules();
    rules.pop_back();
    EXPECT_THROW(ScriptedBackend(clock, ScriptedConfig{rules, 1, 8, 20, {}}), std::invalid_argument);
}

TEST(SplitFragments, KeepsCodePointsWhole)
{
    const auto parts = split_fragments("a\xC3\xA9\xE6\x9C\xBA" "bcdefghij", 3);
    ASSERT_EQ(parts.size(), 4u);
    EXPECT_EQ(parts[0], "a\xC3\xA9\xE6\x9C\xBA");
    EXPECT_EQ(parts[3], "hij");
}

TEST(Conditioning, Deterministic)
{
    Observation o;
    o.scene = builtin_fixture().initial_scene;
    EXPECT_EQ(derive_conditioning("pick can", o), derive_conditioning("pick can", o));
}

TEST(Conditioning, EmptyInstructionRejected)
{
    EXPECT_THROW(derive_conditioning("", Observation{}), std::invalid_argument);
}

// Distinct scenes over a corpus of object displacements and holdings give
// distinct digests.
TEST(Conditioning, DistinctScenesDistinctDigests)
{
    std::set<std::array<double, kDigestDim>> seen;
    std::set<std::string> scenes;
    const auto base = builtin_fixture().initial_scene;
    for (int i = 0; i < 400; ++i) {
        Observation o;
        o.scene = base;
        o.scene.objects.at("can").position.x += 0.001 * i;
        if (i % 3 == 0) {
            o.scene.gripper_contents = "toy";
        }
        if (i % 5 == 0) {
            o.scene.objects.at("apple").container = "box";
        }
        if (!scenes.insert(canonical_scene(o.scene)).second) {
            continue;
        }
        EXPECT_TRUE(seen.insert(derive_conditioning("pick can", o).observation_digest).second) << i;
    }
    EXPECT_EQ(seen.size(), scenes.size());
}

} // namespace
} // namespace twincore
