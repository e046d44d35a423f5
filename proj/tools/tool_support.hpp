#pragma once

#include "twincore/harness.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace twincore::tools {

// A builtin scenario name or a path to a JSON scenario file.
inline ScenarioScript load_scenario(const std::string& name_or_path)
{
    if (std::filesystem::is_regular_file(name_or_path)) {
        std::ifstream in(name_or_path);
        try {
            return scenario_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw ScenarioInvalid(name_or_path + ": " + e.what());
        }
    }
    if (auto s = find_builtin_scenario(name_or_path)) {
        return *s;
    }
    throw ScenarioInvalid("no builtin scenario or file named '" + name_or_path + "'");
}

inline std::atomic<bool> g_stop{false};

inline void install_stop_handlers()
{
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
}

template <class Pred>
void wait_until_stopped(Pred keep_running)
{
    while (!g_stop && keep_running()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

} // namespace twincore::tools
