#pragma once

// WebSocket server. One coordinator per session; clients attach to
// /user, /robot or /observer with ?session=<id> (default "default").

#include "twincore/coordinator.hpp"
#include "twincore/local_session.hpp"
#include "twincore/task.hpp"
#include "twincore/wire.hpp"

#include <atomic>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

namespace twincore::net {

// Per-connection send queue: FIFO, except that halts overtake queued
// chunks that have not started writing.
class OutboundQueue {
public:
    void push(std::string text, bool priority = false);
    bool empty() const { return urgent_.empty() && normal_.empty(); }
    std::size_t size() const { return urgent_.size() + normal_.size(); }
    std::string pop();

private:
    std::deque<std::string> urgent_;
    std::deque<std::string> normal_;
};

class BindFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GatewayConfig {
    std::string bind = "127.0.0.1";
    std::uint16_t port = 0;
    SceneFixture fixture = builtin_fixture();
    BackendFactory make_backend;
    CoordinatorConfig coordinator;
    // Coordinator loop period.
    int quantum_ms = 10;
};

class Gateway {
public:
    explicit Gateway(GatewayConfig config);
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    // Throws BindFailure.
    void start();
    // Closes every session (halting robots that received chunks), flushes
    // and closes connections, then joins the loop thread.
    void stop();

    std::uint16_t port() const;
    std::uint64_t malformed_frames() const;
    std::vector<std::string> sessions() const;
    // Snapshot of a session's log; empty if the session does not exist.
    std::vector<LogRecord> session_log(const std::string& id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace twincore::net
