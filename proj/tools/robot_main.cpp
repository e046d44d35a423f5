#include "tool_support.hpp"
#include "twincore/net/robot_client.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace twincore;

int main(int argc, char** argv)
{
    CLI::App app{"Simulated 26-DoF robot client"};
    net::RobotClientConfig config;
    config.endpoint.port = 8080;
    app.add_option("--host", config.endpoint.host, "Server host");
    app.add_option("--port", config.endpoint.port, "Server port");
    app.add_option("--session", config.session, "Session id");
    app.add_option("--tick-ms", config.tick_ms, "Control tick period")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    tools::install_stop_handlers();
    net::RobotClient robot(config);
    try {
        robot.start();
    } catch (const std::exception& e) {
        std::cerr << "twincore-robot: " << e.what() << "\n";
        return 1;
    }
    std::cout << "attached to session '" << config.session << "'" << std::endl;
    tools::wait_until_stopped([&] { return robot.connected(); });
    const auto reason = robot.close_reason();
    robot.stop();
    if (!reason.empty()) {
        std::cerr << "twincore-robot: closed by server: " << reason << "\n";
    }
    return reason.empty() || reason == "server shutting down" ? 0 : 1;
}
