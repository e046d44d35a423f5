#include "twincore/coordinator.hpp"

namespace twincore {

using Json = nlohmann::ordered_json;

std::string_view to_string(CoreRole role)
{
    return role == CoreRole::active ? "active" : "standby";
}

std::string_view to_string(CoreState state)
{
    switch (state) {
    case CoreState::hearing: return "hearing";
    case CoreState::speaking: return "speaking";
    case CoreState::acting: return "acting";
    case CoreState::retracting: return "retracting";
    }
    return "?";
}

std::string_view to_string(InteractionMode mode)
{
    switch (mode) {
    case InteractionMode::voice_only: return "voice_only";
    case InteractionMode::start_action: return "start_action";
    case InteractionMode::concurrent_query: return "concurrent_query";
    case InteractionMode::voice_interrupt: return "voice_interrupt";
    case InteractionMode::action_switch: return "action_switch";
    case InteractionMode::emergency_stop: return "emergency_stop";
    }
    return "?";
}

std::string_view to_string(PreemptReason reason)
{
    switch (reason) {
    case PreemptReason::speech_barge_in: return "speech_barge_in";
    case PreemptReason::task_switch: return "task_switch";
    case PreemptReason::halt: return "halt";
    }
    return "?";
}

InteractionMode resolve_interaction_mode(ControlToken token, CoreState active_state, CoreRole routed_to)
{
    const auto unmapped = [&] {
        return UnmappedCombination(std::string("no interaction mode for (") + std::string(to_string(token)) + ", " +
                                   std::string(to_string(active_state)) + ", " + std::string(to_string(routed_to)) +
                                   ")");
    };
    if (token == ControlToken::end) {
        throw unmapped();
    }
    if (routed_to == CoreRole::active && active_state != CoreState::hearing) {
        throw unmapped();
    }
    switch (active_state) {
    case CoreState::hearing:
        switch (token) {
        case ControlToken::res: return InteractionMode::voice_only;
        case ControlToken::act: return InteractionMode::start_action;
        case ControlToken::halt: return InteractionMode::emergency_stop;
        case ControlToken::end: break;
        }
        break;
    case CoreState::speaking:
        return InteractionMode::voice_interrupt;
    case CoreState::acting:
    case CoreState::retracting:
        switch (token) {
        case ControlToken::res: return InteractionMode::concurrent_query;
        case ControlToken::act: return InteractionMode::action_switch;
        case ControlToken::halt: return InteractionMode::emergency_stop;
        case ControlToken::end: break;
        }
        break;
    }
    throw unmapped();
}

class Coordinator::Channel final : public RobotChannel {
public:
    Channel(Coordinator& owner, int core) : owner_(&owner), core_(core) {}
    void send_chunk(const ActionChunk& chunk) override { owner_->send_chunk(core_, chunk); }
    void send_halt(Epoch epoch) override { owner_->send_halt(core_, epoch); }

private:
    Coordinator* owner_;
    int core_;
};

struct Coordinator::Core {
    CoreState state = CoreState::hearing;

    std::unique_ptr<GenerationHandle> gen;
    std::optional<StreamParser> parser;
    std::string utterance;
    bool end_probe = false;
    bool speaking = false;
    std::optional<InteractionMode> mode;

    std::unique_ptr<Channel> channel;
    std::unique_ptr<ScriptedExpert> expert;
    std::unique_ptr<ActionLoop> loop;
    std::string task_name;
    std::string task_instruction;

    std::optional<std::string> pending;
    bool swap_after_teardown = false;
};

Coordinator::Coordinator(const Clock& clock, PolicyBackend& backend, const SceneFixture& fixture, SessionLog& log,
                         CoordinatorConfig config)
    : clock_(&clock), backend_(&backend), fixture_(&fixture), log_(&log), config_(std::move(config))
{
    for (int i = 0; i < 2; ++i) {
        cores_[i] = std::make_unique<Core>();
        cores_[i]->channel = std::make_unique<Channel>(*this, i);
    }
    robot_state_.q = fixture.home;
    scene_ = fixture.initial_scene;
    this->log(std::nullopt, "session_open", Json{{"active", active_}, {"permit", permit_}});
}

Coordinator::~Coordinator() = default;

Coordinator::Core& Coordinator::core(int i)
{
    return *cores_.at(static_cast<std::size_t>(i));
}

const Coordinator::Core& Coordinator::core(int i) const
{
    return *cores_.at(static_cast<std::size_t>(i));
}

CoreState Coordinator::state(int c) const
{
    return core(c).state;
}

bool Coordinator::generating(int c) const
{
    return core(c).gen != nullptr;
}

bool Coordinator::has_pending_task(int c) const
{
    return core(c).pending.has_value();
}

const ActionLoop* Coordinator::loop(int c) const
{
    return core(c).loop.get();
}

bool Coordinator::idle() const
{
    for (const auto& item : inbox_) {
        if (!std::holds_alternative<wire::State>(item)) {
            return false;
        }
    }
    for (const auto& c : cores_) {
        if (c->gen || c->loop || c->pending || c->state != CoreState::hearing) {
            return false;
        }
    }
    return true;
}

std::vector<wire::Frame> Coordinator::take_user_frames()
{
    std::vector<wire::Frame> out;
    out.swap(user_frames_);
    return out;
}

void Coordinator::log(std::optional<int> c, std::string event, Json detail)
{
    LogRecord r;
    r.ts = clock_->now_ms();
    r.epoch = epoch_;
    r.core = c;
    r.event = std::move(event);
    r.detail = std::move(detail);
    log_->append(std::move(r));
}

void Coordinator::set_state(int c, CoreState s)
{
    auto& k = core(c);
    if (k.state == s) {
        return;
    }
    log(c, "state", Json{{"from", to_string(k.state)}, {"to", to_string(s)}});
    k.state = s;
}

Observation Coordinator::observation(bool task_complete)
{
    Observation o;
    o.scene = scene_;
    o.frame_id = ++next_frame_id_;
    o.task_complete = task_complete;
    return o;
}

void Coordinator::post_utterance(std::string text)
{
    inbox_.emplace_back(std::move(text));
}

void Coordinator::post_robot_state(const RobotState& state, std::optional<SceneSnapshot> scene)
{
    wire::State s;
    s.state = state;
    s.scene = std::move(scene);
    inbox_.emplace_back(std::move(s));
}

void Coordinator::post_chunk_ack(const ChunkAck& ack)
{
    inbox_.emplace_back(ack);
}

void Coordinator::advance()
{
    if (closed_) {
        inbox_.clear();
        return;
    }
    const auto drain_inbox = [&] {
        while (!inbox_.empty() && !closed_) {
            InboxItem item = std::move(inbox_.front());
            inbox_.pop_front();
            if (auto* text = std::get_if<std::string>(&item)) {
                dispatch_user_event(*text);
            } else if (auto* s = std::get_if<wire::State>(&item)) {
                if (s->state.moving != robot_state_.moving) {
                    log(std::nullopt, "robot_motion", Json{{"moving", s->state.moving}, {"tick", s->state.tick}});
                }
                robot_state_ = s->state;
                if (s->scene) {
                    scene_ = *s->scene;
                }
            } else {
                handle_ack(std::get<ChunkAck>(item));
            }
        }
    };
    drain_inbox();
    for (int c = 0; c < 2 && !closed_; ++c) {
        poll_generation(c);
    }
    drain_inbox();
}

RoutingDecision Coordinator::dispatch_user_event(const std::string& utterance)
{
    if (closed_) {
        throw SessionClosed();
    }
    log(std::nullopt, "utterance", Json{{"text", utterance}});
    RoutingDecision d;
    d.core = core(active_).state == CoreState::hearing ? active_ : 1 - active_;
    d.role = role(d.core);
    d.replaced = core(d.core).gen != nullptr;
    log(d.core, "route", Json{{"role", to_string(d.role)}, {"replaced", d.replaced}});
    start_generation(d.core, utterance, false);
    return d;
}

void Coordinator::start_generation(int c, const std::string& utterance, bool end_probe)
{
    auto& k = core(c);
    if (k.gen) {
        end_generation(c, true);
    }
    PolicyRequest request;
    request.observation = observation(end_probe);
    request.utterance = utterance;
    request.robot_state = robot_state_;
    request.dialogue_context.assign(context_.begin(), context_.end());
    try {
        k.gen = backend_->generate(request);
    } catch (const std::exception& e) {
        log(c, "backend_error", Json{{"error", e.what()}});
        return;
    }
    k.parser.emplace(config_.parse_mode);
    k.utterance = utterance;
    k.end_probe = end_probe;
    k.speaking = false;
    k.mode.reset();
    log(c, "generate", Json{{"utterance", utterance}, {"end_probe", end_probe}});
}

void Coordinator::end_generation(int c, bool interrupted)
{
    auto& k = core(c);
    if (k.gen) {
        k.gen->cancel();
    }
    if (k.speaking) {
        wire::SpeechEnd f{c, interrupted ? wire::SpeechEnd::Reason::interrupted : wire::SpeechEnd::Reason::done,
                          clock_->now_ms()};
        user_frames_.emplace_back(f);
        log(c, "speech_end", Json{{"reason", interrupted ? "interrupted" : "done"}});
    }
    k.gen.reset();
    k.parser.reset();
    k.speaking = false;
    k.end_probe = false;
    k.mode.reset();
    if (k.state == CoreState::speaking) {
        set_state(c, CoreState::hearing);
    }
}

void Coordinator::poll_generation(int c)
{
    auto& k = core(c);
    if (!k.gen) {
        return;
    }
    GenerationHandle* handle = k.gen.get();
    const auto run_events = [&](const std::vector<StreamEvent>& events) {
        for (const auto& ev : events) {
            if (k.gen.get() != handle) {
                return;
            }
            handle_event(c, ev);
        }
    };
    try {
        for (const auto& fragment : handle->poll()) {
            if (k.gen.get() != handle) {
                return;
            }
            run_events(k.parser->feed(fragment));
        }
        if (k.gen.get() != handle) {
            return;
        }
        const auto status = handle->status();
        if (status == GenerationStatus::completed) {
            run_events(k.parser->finish());
        } else if (status == GenerationStatus::failed) {
            log(c, "backend_error", Json{{"error", handle->failure().value_or("generation failed")}});
            const bool probe = k.end_probe;
            end_generation(c, true);
            if (probe) {
                k.loop.reset();
                set_state(c, CoreState::hearing);
                after_teardown(c);
            }
        }
    } catch (const GrammarError& e) {
        ++grammar_errors_;
        log(c, "grammar_error", Json{{"kind", to_string(e.kind())}, {"offset", e.offset()}});
        const bool probe = k.end_probe;
        end_generation(c, true);
        if (probe) {
            k.loop.reset();
            set_state(c, CoreState::hearing);
            after_teardown(c);
        }
    }
}

void Coordinator::handle_event(int c, const StreamEvent& event)
{
    switch (event.kind) {
    case StreamEvent::Kind::control_detected:
        on_control(c, event.control);
        return;
    case StreamEvent::Kind::speech_delta:
        user_frames_.emplace_back(wire::SpeechDelta{c, event.text, clock_->now_ms()});
        log(c, "speech_delta", Json{{"text", event.text}});
        return;
    case StreamEvent::Kind::instruction_delta:
        return;
    case StreamEvent::Kind::finalized:
        on_finalized(c, *event.output);
        return;
    }
}

void Coordinator::on_control(int c, ControlToken token)
{
    auto& k = core(c);
    log(c, "control", Json{{"token", to_string(token)}});
    k.speaking = true;
    if (k.end_probe) {
        // The task is over once the model says so; its speech follows.
        log(c, "task_end", Json{{"task", k.task_name}, {"token", to_string(token)}});
        k.loop.reset();
        k.expert.reset();
        set_state(c, CoreState::speaking);
        return;
    }
    InteractionMode mode;
    try {
        mode = resolve_interaction_mode(token, core(active_).state, role(c));
    } catch (const UnmappedCombination& e) {
        log(c, "mode_error", Json{{"error", e.what()}});
        end_generation(c, true);
        return;
    }
    apply_mode(c, token, mode);
}

void Coordinator::apply_mode(int c, ControlToken token, InteractionMode mode)
{
    auto& k = core(c);
    log(c, "mode", Json{{"mode", to_string(mode)}, {"token", to_string(token)}, {"role", to_string(role(c))}});
    k.mode = mode;
    switch (mode) {
    case InteractionMode::voice_only:
    case InteractionMode::start_action:
        if (c != active_) {
            // Routed to Standby but the Active core has since gone idle.
            swap_roles();
        }
        set_state(c, CoreState::speaking);
        return;
    case InteractionMode::concurrent_query:
        set_state(c, CoreState::speaking);
        return;
    case InteractionMode::voice_interrupt: {
        preempt(c, active_, PreemptReason::speech_barge_in, epoch_);
        if (c != active_) {
            swap_roles();
        }
        apply_mode(c, token, resolve_interaction_mode(token, core(active_).state, CoreRole::active));
        return;
    }
    case InteractionMode::action_switch:
        clear_pending();
        k.swap_after_teardown = true;
        set_state(c, CoreState::speaking);
        preempt(c, active_, PreemptReason::task_switch, epoch_);
        return;
    case InteractionMode::emergency_stop:
        clear_pending();
        set_state(c, CoreState::speaking);
        if (c == active_) {
            send_halt_now();
        } else if (core(active_).state == CoreState::acting || core(active_).state == CoreState::retracting) {
            k.swap_after_teardown = true;
            preempt(c, active_, PreemptReason::halt, epoch_);
        } else {
            swap_roles();
            send_halt_now();
        }
        return;
    }
}

void Coordinator::on_finalized(int c, const StructuredOutput& output)
{
    auto& k = core(c);
    const bool probe = k.end_probe;
    const auto mode = k.mode;
    if (!probe) {
        context_.push_back({k.utterance, output});
        while (context_.size() > kDialogueContextCap) {
            context_.pop_front();
        }
    }
    log(c, "finalized", Json{{"output", serialize(output)}});
    end_generation(c, false);
    if (probe) {
        after_teardown(c);
        return;
    }
    if (output.control == ControlToken::act && output.action_instruction &&
        (mode == InteractionMode::start_action || mode == InteractionMode::action_switch)) {
        k.pending = *output.action_instruction;
        log(c, "task_pending", Json{{"instruction", *k.pending}});
        try_start_pending();
    }
}

PreemptOutcome Coordinator::preempt(int caller, int target, PreemptReason reason, Epoch observed_epoch)
{
    if (closed_) {
        return {false, epoch_};
    }
    if (caller != permit_) {
        throw PermitNotHeld("core " + std::to_string(caller) + " does not hold the preemption permit");
    }
    if (observed_epoch != epoch_) {
        log(caller, "preempt_stale", Json{{"target", target}, {"observed", observed_epoch}});
        return {false, epoch_};
    }
    ++epoch_;
    log(caller, "preempt", Json{{"target", target}, {"reason", to_string(reason)}});
    auto& t = core(target);
    if (t.gen) {
        end_generation(target, true);
    }
    if (t.loop) {
        if (!t.loop->finished()) {
            if (reason == PreemptReason::task_switch && t.state == CoreState::acting) {
                set_state(target, CoreState::retracting);
                log(target, "retract_start", Json{{"tick", robot_state_.tick}, {"depth", t.loop->stack().size()}});
            }
            if (reason != PreemptReason::speech_barge_in) {
                t.loop->stop(reason == PreemptReason::halt ? StopMode::halt_on_stop : StopMode::retract_on_stop,
                             epoch_);
                if (t.loop->finished()) {
                    on_loop_finished(target);
                }
            }
        } else if (reason != PreemptReason::speech_barge_in) {
            // Completed loop awaiting its END reply.
            t.loop.reset();
            t.expert.reset();
            set_state(target, CoreState::hearing);
        }
    } else if (reason == PreemptReason::halt) {
        send_halt(target, epoch_);
    }
    after_teardown(target);
    return {true, epoch_};
}

void Coordinator::swap_roles()
{
    auto& a = core(active_);
    if (a.state != CoreState::hearing || a.loop) {
        throw TeardownIncomplete("active core has not finished its teardown");
    }
    ++epoch_;
    active_ = 1 - active_;
    permit_ = 1 - active_;
    log(std::nullopt, "swap", Json{{"active", active_}});
    log(std::nullopt, "permit", Json{{"holder", permit_}});
}

void Coordinator::after_teardown(int target)
{
    auto& t = core(target);
    if (t.state != CoreState::hearing || t.loop) {
        return;
    }
    auto& other = core(1 - target);
    if (target == active_ && other.swap_after_teardown) {
        other.swap_after_teardown = false;
        swap_roles();
    }
    try_start_pending();
}

void Coordinator::clear_pending()
{
    for (int c = 0; c < 2; ++c) {
        if (core(c).pending) {
            log(c, "task_dropped", Json{{"instruction", *core(c).pending}});
            core(c).pending.reset();
        }
    }
}

void Coordinator::try_start_pending()
{
    auto& a = core(active_);
    const auto& other = core(1 - active_);
    if (!a.pending || a.state != CoreState::hearing || a.gen || a.loop) {
        return;
    }
    if (other.loop || other.state == CoreState::acting || other.state == CoreState::retracting) {
        return;
    }
    start_task(active_);
}

void Coordinator::start_task(int c)
{
    auto& k = core(c);
    const std::string instruction = *k.pending;
    k.pending.reset();
    const TaskSpec* spec = fixture_->match_instruction(instruction);
    if (!spec) {
        log(c, "task_outcome", Json{{"task", nullptr}, {"outcome", "halted"}, {"error", "no task matches instruction"}});
        return;
    }
    k.task_name = spec->name;
    k.task_instruction = instruction;
    k.expert = std::make_unique<ScriptedExpert>(*fixture_, *spec);
    auto options = config_.loop_options;
    if (!options.warn) {
        options.warn = [this, c](const std::string& w) { log(c, "warning", Json{{"message", w}}); };
    }
    k.loop = std::make_unique<ActionLoop>(*k.expert, instruction, *k.channel, epoch_, next_chunk_id_, options);
    set_state(c, CoreState::acting);
    log(c, "task_start", Json{{"task", spec->name}, {"instruction", instruction}, {"tick", robot_state_.tick}});
    k.loop->start(observation(false), robot_state_);
    if (k.loop && k.loop->finished()) {
        on_loop_finished(c);
    }
}

void Coordinator::handle_ack(const ChunkAck& ack)
{
    log(std::nullopt, "chunk_ack", Json{{"chunk_id", ack.chunk_id}, {"executed_steps", ack.executed_steps}});
    for (int c = 0; c < 2; ++c) {
        auto& k = core(c);
        if (!k.loop || k.loop->finished() || k.loop->in_flight() != ack.chunk_id) {
            continue;
        }
        k.loop->on_ack(ack, observation(false), robot_state_);
        if (k.loop->finished()) {
            on_loop_finished(c);
        }
        return;
    }
}

void Coordinator::on_loop_finished(int c)
{
    auto& k = core(c);
    const auto outcome = k.loop->outcome();
    Json detail{{"task", k.task_name},
                {"outcome", to_string(outcome.kind)},
                {"retracted", outcome.retracted},
                {"chunks", outcome.chunks_executed},
                {"tick", robot_state_.tick}};
    if (outcome.error) {
        detail["error"] = *outcome.error;
    }
    log(c, "task_outcome", std::move(detail));
    if (outcome.retracted) {
        log(c, "retract_done", Json{{"tick", robot_state_.tick}});
    }
    if (outcome.kind == TaskOutcome::Kind::completed) {
        // Ask the model to acknowledge completion; the task ends on its END.
        start_generation(c, k.task_instruction, true);
        if (k.gen) {
            return;
        }
    }
    k.loop.reset();
    k.expert.reset();
    set_state(c, CoreState::hearing);
    after_teardown(c);
}

void Coordinator::send_halt_now()
{
    send_halt(-1, epoch_);
}

void Coordinator::send_chunk(int c, const ActionChunk& chunk)
{
    if (closed_) {
        return;
    }
    chunk_ever_sent_ = true;
    const bool accepted = outbox_.push_chunk(wire::Chunk{chunk, clock_->now_ms()});
    log(c, "chunk_sent",
        Json{{"chunk_id", chunk.chunk_id},
             {"chunk_epoch", chunk.epoch},
             {"steps", chunk.steps.size()},
             {"tick", robot_state_.tick},
             {"accepted", accepted}});
    if (!accepted) {
        inbox_.emplace_back(ChunkAck{chunk.chunk_id, 0});
    }
}

void Coordinator::send_halt(int c, Epoch epoch)
{
    const auto dropped = outbox_.push_halt(wire::Halt{epoch, clock_->now_ms()});
    log(c < 0 ? std::nullopt : std::optional<int>(c), "halt_sent",
        Json{{"halt_epoch", epoch}, {"tick", robot_state_.tick}, {"dropped", dropped}});
    for (auto id : dropped) {
        inbox_.emplace_back(ChunkAck{id, 0});
    }
}

void Coordinator::close()
{
    if (closed_) {
        return;
    }
    for (int c = 0; c < 2; ++c) {
        end_generation(c, true);
        core(c).loop.reset();
        core(c).expert.reset();
        core(c).pending.reset();
    }
    if (chunk_ever_sent_) {
        ++epoch_;
        send_halt(-1, epoch_);
    }
    closed_ = true;
    inbox_.clear();
    log(std::nullopt, "session_closed", Json{{"tick", robot_state_.tick}});
}

} // namespace twincore
