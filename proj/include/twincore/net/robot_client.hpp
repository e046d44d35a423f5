#pragma once

// Simulated robot attached to a gateway over the robot channel. Steps the
// simulator every tick, reports state (with scene) and chunk acks.

#include "twincore/net/remote_backend.hpp"
#include "twincore/robot_sim.hpp"
#include "twincore/wire.hpp"

#include <memory>
#include <string>
#include <vector>

namespace twincore::net {

struct RobotClientConfig {
    Endpoint endpoint;
    std::string session = "default";
    SceneFixture fixture = builtin_fixture();
    int tick_ms = kTickMs;
};

class RobotClient {
public:
    explicit RobotClient(RobotClientConfig config);
    ~RobotClient();

    RobotClient(const RobotClient&) = delete;
    RobotClient& operator=(const RobotClient&) = delete;

    // Connects and starts ticking. Throws std::runtime_error if the
    // connection or handshake fails.
    void start();
    void stop();

    // False once the server closed the channel.
    bool connected() const;
    // Close reason sent by the server, if any.
    std::string close_reason() const;
    std::vector<wire::Frame> received() const;
    std::vector<StepRecord> step_log() const;
    RobotState state() const;
    SceneSnapshot scene() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace twincore::net
