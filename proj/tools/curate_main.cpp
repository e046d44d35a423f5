#include "twincore/curation.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace twincore;

int main(int argc, char** argv)
{
    CLI::App app{"Turn demonstration records into annotated training instances"};
    std::string in;
    std::string out;
    std::uint64_t seed = 0;
    std::string config_path;
    std::string prompts_dir;
    std::string render;
    std::vector<std::string> slot_values;
    app.add_option("--in", in, "Input corpus (JSONL)");
    app.add_option("--out", out, "Output training instances (JSONL)");
    app.add_option("--seed", seed, "Seed for confirmation, stop phrase and interrupt frame choice");
    app.add_option("--config", config_path, "Rules file (TOML)")->check(CLI::ExistingFile);
    app.add_option("--prompts", prompts_dir, "Prompt template directory")->check(CLI::ExistingDirectory);
    app.add_option("--render", render, "Print one prompt template filled from --set values, then exit");
    app.add_option("--set", slot_values, "Slot value as name=value (repeatable)");
    CLI11_PARSE(app, argc, argv);

    try {
        if (!render.empty()) {
            if (prompts_dir.empty()) {
                std::cerr << "curate: --render needs --prompts\n";
                return 2;
            }
            std::map<std::string, std::string> values;
            for (const auto& kv : slot_values) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    std::cerr << "curate: --set expects name=value, got '" << kv << "'\n";
                    return 2;
                }
                values[kv.substr(0, eq)] = kv.substr(eq + 1);
            }
            std::cout << PromptLibrary::load(prompts_dir).render(render, values);
            return 0;
        }
        if (in.empty() || out.empty()) {
            std::cerr << "curate: --in and --out are required\n";
            return 2;
        }
        const CurationConfig config = config_path.empty() ? CurationConfig{} : load_curation_config(config_path);
        const auto stats = run_pipeline(in, out, config, seed);
        std::cout << to_json(stats).dump(2) << "\n";
        return 0;
    } catch (const CurationError& e) {
        std::cerr << "curate: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "curate: " << e.what() << "\n";
        return 1;
    }
}
