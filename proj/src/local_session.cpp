#include "twincore/local_session.hpp"

namespace twincore {

LocalSession::LocalSession(const SceneFixture& fixture, const BackendFactory& make_backend, CoordinatorConfig config)
    : backend_(make_backend(clock_)), robot_(fixture)
{
    coordinator_ = std::make_unique<Coordinator>(clock_, *backend_, fixture, log_, std::move(config));
    coordinator_->post_robot_state(robot_.state(), robot_.scene());
}

void LocalSession::schedule(std::uint64_t tick, std::string utterance)
{
    scheduled_.emplace(tick, std::move(utterance));
}

void LocalSession::deliver_to_robot()
{
    for (auto& frame : coordinator_->robot_outbox().drain()) {
        if (const auto* h = std::get_if<wire::Halt>(&frame)) {
            robot_.halt(h->epoch);
        } else if (const auto* c = std::get_if<wire::Chunk>(&frame)) {
            robot_.enqueue_chunk(c->chunk);
        }
        robot_wire_.push_back({robot_.state().tick, std::move(frame)});
    }
}

void LocalSession::run_tick()
{
    const std::uint64_t now = robot_.state().tick;
    for (auto it = scheduled_.begin(); it != scheduled_.end() && it->first <= now;) {
        coordinator_->post_utterance(it->second);
        it = scheduled_.erase(it);
    }
    for (int q = 0; q < kQuantaPerTick; ++q) {
        coordinator_->advance();
        clock_.advance(kQuantumMs);
    }
    for (auto& f : coordinator_->take_user_frames()) {
        user_frames_.push_back(std::move(f));
    }
    deliver_to_robot();
    const auto result = robot_.step();
    if (!coordinator_->closed()) {
        coordinator_->post_robot_state(result.state, robot_.scene());
        for (const auto& ack : result.acks) {
            coordinator_->post_chunk_ack(ack);
        }
    }
}

bool LocalSession::quiescent() const
{
    return scheduled_.empty() && coordinator_->idle() && robot_.queued_steps() == 0 && !robot_.state().moving &&
           coordinator_->robot_outbox().empty();
}

bool LocalSession::run(std::uint64_t max_ticks, std::uint64_t settle_ticks)
{
    std::uint64_t calm = 0;
    for (std::uint64_t i = 0; i < max_ticks; ++i) {
        run_tick();
        calm = quiescent() ? calm + 1 : 0;
        if (calm >= settle_ticks) {
            return true;
        }
    }
    return false;
}

void LocalSession::close()
{
    coordinator_->close();
    for (auto& f : coordinator_->take_user_frames()) {
        user_frames_.push_back(std::move(f));
    }
    deliver_to_robot();
}

} // namespace twincore
