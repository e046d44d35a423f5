#pragma once

// In-process session on a simulated clock: coordinator, robot simulator and
// a deterministic scheduler. Each robot tick is five 10 ms coordinator
// quanta, then outbox delivery to the robot (halts first), then one robot
// step whose state and acks feed the next tick.

#include "twincore/coordinator.hpp"
#include "twincore/robot_sim.hpp"

#include <functional>
#include <map>
#include <memory>

namespace twincore {

using BackendFactory = std::function<std::unique_ptr<PolicyBackend>(const Clock&)>;

inline constexpr int kQuantaPerTick = 5;
inline constexpr std::int64_t kQuantumMs = kTickMs / kQuantaPerTick;

struct WireDelivery {
    std::uint64_t tick = 0;
    wire::Frame frame;
};

class LocalSession {
public:
    LocalSession(const SceneFixture& fixture, const BackendFactory& make_backend, CoordinatorConfig config = {});

    void schedule(std::uint64_t tick, std::string utterance);
    void run_tick();
    // Runs until every scheduled utterance is delivered and the session is
    // quiescent for `settle_ticks`, or `max_ticks` elapse. True if it settled.
    bool run(std::uint64_t max_ticks, std::uint64_t settle_ticks = 5);
    void close();

    bool quiescent() const;
    std::uint64_t tick() const { return robot_.state().tick; }

    Coordinator& coordinator() { return *coordinator_; }
    const RobotSim& robot() const { return robot_; }
    const SessionLog& log() const { return log_; }
    SessionLog& log() { return log_; }
    const SimClock& clock() const { return clock_; }
    const std::vector<WireDelivery>& robot_wire() const { return robot_wire_; }
    const std::vector<wire::Frame>& user_frames() const { return user_frames_; }

private:
    void deliver_to_robot();

    SimClock clock_;
    SessionLog log_;
    std::unique_ptr<PolicyBackend> backend_;
    RobotSim robot_;
    std::unique_ptr<Coordinator> coordinator_;
    std::multimap<std::uint64_t, std::string> scheduled_;
    std::vector<WireDelivery> robot_wire_;
    std::vector<wire::Frame> user_frames_;
};

} // namespace twincore
