#include "tool_support.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace twincore;

int main(int argc, char** argv)
{
    CLI::App app{"Run interactive scenarios as seeded multi-trial suites"};
    app.require_subcommand(1);

    auto* list = app.add_subcommand("list", "Print the builtin scenarios as JSON");

    auto* run = app.add_subcommand("run", "Run one or more scenarios");
    std::vector<std::string> scenarios;
    std::optional<std::size_t> trials;
    std::optional<std::uint64_t> seed;
    std::optional<double> fault;
    std::string backend = "scripted";
    std::size_t jobs = 1;
    std::string out;
    bool with_trials = false;
    run->add_option("--scenario", scenarios, "Builtin name or JSON file; repeatable, 'all' for every builtin")
        ->required();
    run->add_option("--trials", trials, "Override the scenario's trial count");
    run->add_option("--seed", seed, "Override the scenario's seed");
    run->add_option("--fault", fault, "Override the backend misread probability")->check(CLI::Range(0.0, 1.0));
    run->add_option("--backend", backend, "Policy backend (fast-clock runs support only 'scripted')");
    run->add_option("--jobs", jobs, "Trials run in parallel")->check(CLI::PositiveNumber);
    run->add_option("--out", out, "Write the JSON report here");
    run->add_flag("--per-trial", with_trials, "Include per-trial metrics in the report");

    CLI11_PARSE(app, argc, argv);

    if (list->parsed()) {
        nlohmann::ordered_json all = nlohmann::ordered_json::array();
        for (const auto& s : builtin_scenarios()) {
            all.push_back(to_json(s));
        }
        std::cout << all.dump(2) << "\n";
        return 0;
    }

    if (backend != "scripted") {
        std::cerr << "harness: fast-clock runs need a deterministic backend; only 'scripted' is supported\n";
        return 2;
    }

    std::vector<ScenarioScript> scripts;
    try {
        for (const auto& name : scenarios) {
            if (name == "all") {
                for (const auto& s : builtin_scenarios()) {
                    scripts.push_back(s);
                }
                continue;
            }
            scripts.push_back(tools::load_scenario(name));
        }
        for (auto& s : scripts) {
            if (trials) s.trials = *trials;
            if (seed) s.seed = *seed;
            if (fault) s.fault_probability = *fault;
            validate(s);
        }
    } catch (const std::exception& e) {
        std::cerr << "harness: " << e.what() << "\n";
        return 2;
    }

    std::vector<ScenarioReport> reports;
    bool all_met = true;
    for (const auto& s : scripts) {
        reports.push_back(run_scenario(s, scripted_backend_factory(), jobs));
        all_met = all_met && reports.back().threshold_met;
    }
    std::cout << format_table(reports);

    if (!out.empty()) {
        nlohmann::ordered_json doc;
        doc["scenarios"] = nlohmann::ordered_json::array();
        for (const auto& r : reports) {
            doc["scenarios"].push_back(to_json(r, with_trials));
        }
        doc["all_thresholds_met"] = all_met;
        std::ofstream f(out, std::ios::binary);
        if (!(f << doc.dump(2) << "\n")) {
            std::cerr << "harness: cannot write " << out << "\n";
            return 2;
        }
    }
    return all_met ? 0 : 1;
}
