#include "tool_support.hpp"
#include "twincore/net/remote_backend.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace twincore;

// Serves the scripted backend over the remote stream protocol, so the
// server's remote backend path can be exercised without a model.
int main(int argc, char** argv)
{
    CLI::App app{"Scripted policy served over the remote stream protocol"};
    std::uint16_t port = 9000;
    std::uint64_t seed = 0;
    double fault = 0.0;
    std::int64_t cadence_ms = 20;
    app.add_option("--port", port, "Listen port (0 picks a free one)");
    app.add_option("--seed", seed, "Seed for fault draws");
    app.add_option("--fault", fault, "Action misread probability")->check(CLI::Range(0.0, 1.0));
    app.add_option("--cadence-ms", cadence_ms, "Delay between fragments")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);

    tools::install_stop_handlers();
    std::unique_ptr<net::PolicyServer> server;
    try {
        server = std::make_unique<net::PolicyServer>(
            [=](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
                ScriptedConfig c;
                c.rules = builtin_rules(fault);
                c.seed = seed;
                c.cadence_ms = cadence_ms;
                return std::make_unique<ScriptedBackend>(clock, std::move(c));
            },
            port);
    } catch (const std::exception& e) {
        std::cerr << "twincore-policy-server: " << e.what() << "\n";
        return 1;
    }
    std::cout << "serving on 127.0.0.1:" << server->port() << std::endl;
    tools::wait_until_stopped([] { return true; });
    server->stop();
    return 0;
}
