#pragma once

// Remote policy over a plain TCP stream. The client writes one JSON
// request line; the server answers with one fragment per line and an empty
// line when the output is complete. Closing the connection cancels.

#include "twincore/policy.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace twincore::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

// "host:port" or ":port". Throws std::invalid_argument.
Endpoint parse_endpoint(const std::string& text);

class RemoteBackend final : public PolicyBackend {
public:
    explicit RemoteBackend(Endpoint endpoint);

    // Throws BackendError(unavailable) if the endpoint cannot be reached.
    std::unique_ptr<GenerationHandle> generate(const PolicyRequest& request) override;

private:
    Endpoint endpoint_;
};

// Serves a PolicyBackend over the line protocol, one generation per
// connection. Used by the policy-server tool and as a test peer.
class PolicyServer {
public:
    using Factory = std::function<std::unique_ptr<PolicyBackend>(const Clock&)>;

    // Port 0 picks a free port.
    PolicyServer(Factory make_backend, std::uint16_t port = 0);
    ~PolicyServer();

    PolicyServer(const PolicyServer&) = delete;
    PolicyServer& operator=(const PolicyServer&) = delete;

    std::uint16_t port() const;
    void stop();

    // "accept", "request", "complete", "client_closed", "bad_request", in
    // order of occurrence across connections.
    std::vector<std::string> events() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace twincore::net
