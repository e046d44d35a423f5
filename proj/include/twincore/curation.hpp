#pragma once

// Turns demonstration trajectories into training instances whose targets
// carry control tokens. Four rules: spoken reply, action with instruction,
// synthetic stop, and completion.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace twincore {

enum class RecordKind { question, manipulation };

struct TrajectoryRecord {
    std::string id;
    RecordKind kind = RecordKind::manipulation;
    std::string instruction;
    std::vector<std::string> frames;
    // Largest per-joint displacement at each frame, radians.
    std::vector<double> action_magnitude;
    bool success = false;
    std::optional<std::size_t> completion_frame;
    // Reference reply for question records.
    std::optional<std::string> answer;
};

enum class CurationRule { res, act, halt, end };
std::string_view to_string(CurationRule rule);

struct TrainingInstance {
    std::string record_id;
    CurationRule rule = CurationRule::res;
    std::size_t frame_index = 0;
    std::string frame;
    std::string user_text;
    std::string target;

    friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

class CurationError : public std::runtime_error {
public:
    enum class Kind { not_a_question, not_manipulation, too_short, not_successful, invalid_record, io_failure, target_invalid };
    CurationError(Kind kind, std::string record_id, const std::string& what);
    Kind kind() const noexcept { return kind_; }
    const std::string& record_id() const noexcept { return record_id_; }

private:
    Kind kind_;
    std::string record_id_;
};

std::string_view to_string(CurationError::Kind kind);

struct CurationConfig {
    double epsilon_act = 0.01;
    std::vector<std::string> confirmations{"Okay, I'll do that.", "Sure, on it.", "Alright, doing that now."};
    std::vector<std::string> stop_phrases{"Stop!", "Stop.", "Please stop.", "Wait, stop!", "Hold on, stop."};
    std::string halt_reply = "Okay, stopping.";
    std::string end_reply = "The action is finished.";
};

// Reads [rules] from a TOML file; absent keys keep their defaults.
CurationConfig load_curation_config(const std::filesystem::path& path);
CurationConfig curation_config_from_toml(std::string_view text);

TrajectoryRecord record_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const TrajectoryRecord& r);
nlohmann::ordered_json to_json(const TrainingInstance& t);

// Whitespace trimmed and collapsed; case and punctuation kept.
std::string clean_instruction(std::string_view instruction);

TrainingInstance annotate_res(const TrajectoryRecord& record, double epsilon_act = 0.01);
TrainingInstance annotate_act(const TrajectoryRecord& record, const std::vector<std::string>& confirmations,
                              std::uint64_t seed);
TrainingInstance synthesize_interrupt(const TrajectoryRecord& record, const std::vector<std::string>& stop_phrases,
                                      std::uint64_t seed, const std::string& reply = "Okay, stopping.");
std::vector<TrainingInstance> annotate_end(const TrajectoryRecord& record,
                                           const std::string& reply = "The action is finished.");

struct CurationStats {
    std::size_t records = 0;
    std::map<std::string, std::size_t> emitted;
    std::map<std::string, std::size_t> skipped;
};

nlohmann::ordered_json to_json(const CurationStats& stats);

// Records are processed in id order. Throws CurationError(target_invalid)
// naming the record if any target fails to reparse strictly.
std::vector<TrainingInstance> curate(std::vector<TrajectoryRecord> records, const CurationConfig& config,
                                     std::uint64_t seed, CurationStats* stats = nullptr);

std::vector<TrajectoryRecord> read_corpus(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<TrainingInstance>& instances);
CurationStats run_pipeline(const std::filesystem::path& corpus, const std::filesystem::path& out,
                           const CurationConfig& config, std::uint64_t seed);

// Text templates for generating synthetic instruction/response pairs with
// an external model. Slots are written {{name}}.
class PromptLibrary {
public:
    static PromptLibrary load(const std::filesystem::path& dir);

    std::vector<std::string> names() const;
    const std::string& raw(const std::string& name) const;
    std::vector<std::string> slots(const std::string& name) const;
    // Throws std::invalid_argument if a slot has no value.
    std::string render(const std::string& name, const std::map<std::string, std::string>& values) const;

private:
    std::map<std::string, std::string> templates_;
};

} // namespace twincore
