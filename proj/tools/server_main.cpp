#include "tool_support.hpp"
#include "twincore/net/gateway.hpp"
#include "twincore/net/remote_backend.hpp"
#include "twincore/net/robot_client.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace twincore;

int main(int argc, char** argv)
{
    CLI::App app{"Dual-core interaction server"};
    std::uint16_t port = 8080;
    std::string bind = "127.0.0.1";
    std::string backend = "scripted";
    std::uint64_t seed = 0;
    double fault = 0.0;
    bool sim_robot = false;
    bool realtime = false;
    bool fast = false;
    std::string scenario;
    int tick_ms = kTickMs;
    std::size_t jobs = 1;
    std::string out;
    app.add_option("--port", port, "Listen port (0 picks a free one)");
    app.add_option("--bind", bind, "Listen address");
    app.add_option("--backend", backend, "scripted | remote:<host:port>");
    app.add_option("--seed", seed, "Seed for the scripted backend / scenario");
    app.add_option("--fault", fault, "Scripted backend misread probability")->check(CLI::Range(0.0, 1.0));
    app.add_flag("--sim-robot", sim_robot, "Attach an in-process simulated robot to the default session");
    auto* rt = app.add_flag("--realtime", realtime, "Serve connections on the wall clock (default)");
    app.add_flag("--fast", fast, "Run --scenario on the simulated clock and exit")->excludes(rt);
    app.add_option("--scenario", scenario, "Builtin scenario name or JSON file (needs --fast)");
    app.add_option("--tick-ms", tick_ms, "Tick period of the in-process robot")->check(CLI::PositiveNumber);
    app.add_option("--jobs", jobs, "Parallel trials in --fast mode")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "Report path in --fast mode");
    CLI11_PARSE(app, argc, argv);

    if (fast) {
        if (scenario.empty()) {
            std::cerr << "twincore-server: --fast needs --scenario\n";
            return 2;
        }
        if (backend != "scripted") {
            std::cerr << "twincore-server: --fast supports only the scripted backend\n";
            return 2;
        }
        ScenarioScript script;
        try {
            script = tools::load_scenario(scenario);
            if (app.count("--seed")) script.seed = seed;
            if (app.count("--fault")) script.fault_probability = fault;
            validate(script);
        } catch (const std::exception& e) {
            std::cerr << "twincore-server: " << e.what() << "\n";
            return 2;
        }
        const auto report = run_scenario(script, scripted_backend_factory(), jobs);
        std::cout << format_table({report});
        if (!out.empty()) {
            std::ofstream(out, std::ios::binary) << to_json(report, true).dump(2) << "\n";
        }
        return report.threshold_met ? 0 : 1;
    }
    if (!scenario.empty()) {
        std::cerr << "twincore-server: --scenario runs only with --fast; drive a live server through /user\n";
        return 2;
    }

    net::GatewayConfig config;
    config.bind = bind;
    config.port = port;
    try {
        if (backend == "scripted") {
            config.make_backend = [seed, fault](const Clock& clock) -> std::unique_ptr<PolicyBackend> {
                ScriptedConfig c;
                c.rules = builtin_rules(fault);
                c.seed = seed;
                return std::make_unique<ScriptedBackend>(clock, std::move(c));
            };
        } else if (backend.rfind("remote:", 0) == 0) {
            const auto ep = net::parse_endpoint(backend.substr(7));
            config.make_backend = [ep](const Clock&) { return std::make_unique<net::RemoteBackend>(ep); };
        } else {
            std::cerr << "twincore-server: unknown backend '" << backend << "'\n";
            return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "twincore-server: " << e.what() << "\n";
        return 2;
    }

    tools::install_stop_handlers();
    net::Gateway gateway(config);
    try {
        gateway.start();
    } catch (const net::BindFailure& e) {
        std::cerr << "twincore-server: " << e.what() << "\n";
        return 1;
    }
    std::cout << "listening on " << bind << ":" << gateway.port() << std::endl;

    std::unique_ptr<net::RobotClient> robot;
    if (sim_robot) {
        net::RobotClientConfig rc;
        rc.endpoint = {"127.0.0.1", gateway.port()};
        rc.tick_ms = tick_ms;
        robot = std::make_unique<net::RobotClient>(rc);
        robot->start();
        std::cout << "simulated robot attached to session 'default'" << std::endl;
    }
    tools::wait_until_stopped([] { return true; });
    gateway.stop();
    if (robot) {
        robot->stop();
    }
    return 0;
}
