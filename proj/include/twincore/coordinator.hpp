#pragma once

// Two policy cores sharing one robot. The Active core owns the current
// task; the Standby core takes any input that arrives while the Active one
// is busy and holds the permit to interrupt it.
//
// Everything here runs on one logical loop: callers post inbox messages and
// call advance(); generations and the action loop are polled from it.

#include "twincore/action.hpp"
#include "twincore/clock.hpp"
#include "twincore/grammar.hpp"
#include "twincore/policy.hpp"
#include "twincore/session_log.hpp"
#include "twincore/task.hpp"
#include "twincore/wire.hpp"

#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace twincore {

enum class CoreRole { active, standby };
enum class CoreState { hearing, speaking, acting, retracting };
enum class InteractionMode { voice_only, start_action, concurrent_query, voice_interrupt, action_switch, emergency_stop };
enum class PreemptReason { speech_barge_in, task_switch, halt };

std::string_view to_string(CoreRole role);
std::string_view to_string(CoreState state);
std::string_view to_string(InteractionMode mode);
std::string_view to_string(PreemptReason reason);

class UnmappedCombination : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class PermitNotHeld : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class TeardownIncomplete : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class SessionClosed : public std::runtime_error {
public:
    SessionClosed() : std::runtime_error("session closed") {}
};

// Total over the 4x4x2 inputs; throws UnmappedCombination where no mode
// applies (END is never a user-path token, and the Active core is only
// routed input while Hearing).
InteractionMode resolve_interaction_mode(ControlToken token, CoreState active_state, CoreRole routed_to);

struct RoutingDecision {
    int core = 0;
    CoreRole role = CoreRole::active;
    // A live generation on that core was replaced.
    bool replaced = false;
};

struct PreemptOutcome {
    bool applied = false;
    Epoch epoch = 0;
};

struct CoordinatorConfig {
    ParseMode parse_mode = ParseMode::lenient;
    LoopOptions loop_options;
};

class Coordinator {
public:
    Coordinator(const Clock& clock, PolicyBackend& backend, const SceneFixture& fixture, SessionLog& log,
                CoordinatorConfig config = {});
    ~Coordinator();

    Coordinator(const Coordinator&) = delete;
    Coordinator& operator=(const Coordinator&) = delete;

    // Inbox. Processed in order by advance().
    void post_utterance(std::string text);
    void post_robot_state(const RobotState& state, std::optional<SceneSnapshot> scene);
    void post_chunk_ack(const ChunkAck& ack);

    void advance();
    // Cancels generations and, if any chunk was ever sent, queues a halt.
    void close();

    // Direct operations, also used by advance().
    RoutingDecision dispatch_user_event(const std::string& utterance);
    PreemptOutcome preempt(int caller, int target, PreemptReason reason, Epoch observed_epoch);
    void swap_roles();

    int active_core() const { return active_; }
    int permit_holder() const { return permit_; }
    CoreRole role(int core) const { return core == active_ ? CoreRole::active : CoreRole::standby; }
    CoreState state(int core) const;
    Epoch epoch() const { return epoch_; }
    bool closed() const { return closed_; }
    // No inbox, generation, loop or pending task anywhere.
    bool idle() const;
    bool generating(int core) const;
    bool has_pending_task(int core) const;
    const ActionLoop* loop(int core) const;
    const RobotState& robot_state() const { return robot_state_; }
    const SceneSnapshot& scene() const { return scene_; }
    const std::deque<Exchange>& dialogue_context() const { return context_; }

    wire::RobotOutbox& robot_outbox() { return outbox_; }
    const wire::RobotOutbox& robot_outbox() const { return outbox_; }
    std::vector<wire::Frame> take_user_frames();
    std::uint64_t grammar_errors() const { return grammar_errors_; }

private:
    struct Core;
    class Channel;
    using InboxItem = std::variant<std::string, wire::State, ChunkAck>;

    Core& core(int i);
    const Core& core(int i) const;
    void log(std::optional<int> core, std::string event, nlohmann::ordered_json detail = nlohmann::ordered_json::object());
    void set_state(int c, CoreState s);
    Observation observation(bool task_complete);

    void start_generation(int c, const std::string& utterance, bool end_probe);
    void end_generation(int c, bool interrupted);
    void poll_generation(int c);
    void handle_event(int c, const StreamEvent& event);
    void on_control(int c, ControlToken token);
    void apply_mode(int c, ControlToken token, InteractionMode mode);
    void on_finalized(int c, const StructuredOutput& output);

    void handle_ack(const ChunkAck& ack);
    void start_task(int c);
    void on_loop_finished(int c);
    void after_teardown(int target);
    void try_start_pending();
    void clear_pending();
    void send_halt_now();

    // Robot channel callbacks.
    void send_chunk(int c, const ActionChunk& chunk);
    void send_halt(int c, Epoch epoch);

    const Clock* clock_;
    PolicyBackend* backend_;
    const SceneFixture* fixture_;
    SessionLog* log_;
    CoordinatorConfig config_;

    std::array<std::unique_ptr<Core>, 2> cores_;
    int active_ = 0;
    int permit_ = 1;
    Epoch epoch_ = 0;
    bool closed_ = false;
    bool chunk_ever_sent_ = false;
    std::uint64_t next_chunk_id_ = 1;
    std::uint64_t next_frame_id_ = 0;
    std::uint64_t grammar_errors_ = 0;

    std::deque<InboxItem> inbox_;
    RobotState robot_state_;
    SceneSnapshot scene_;
    std::deque<Exchange> context_;
    wire::RobotOutbox outbox_;
    std::vector<wire::Frame> user_frames_;
};

} // namespace twincore
