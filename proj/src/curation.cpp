#include "twincore/curation.hpp"

#include "twincore/grammar.hpp"
#include "twincore/random.hpp"

#include <tomlplusplus/toml.hpp>

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace twincore {

using Json = nlohmann::ordered_json;

std::string_view to_string(CurationRule rule)
{
    switch (rule) {
    case CurationRule::res: return "res";
    case CurationRule::act: return "act";
    case CurationRule::halt: return "halt";
    case CurationRule::end: return "end";
    }
    return "?";
}

std::string_view to_string(CurationError::Kind kind)
{
    using K = CurationError::Kind;
    switch (kind) {
    case K::not_a_question: return "not_a_question";
    case K::not_manipulation: return "not_manipulation";
    case K::too_short: return "too_short";
    case K::not_successful: return "not_successful";
    case K::invalid_record: return "invalid_record";
    case K::io_failure: return "io_failure";
    case K::target_invalid: return "target_invalid";
    }
    return "?";
}

CurationError::CurationError(Kind kind, std::string record_id, const std::string& what)
    : std::runtime_error(record_id.empty() ? what : record_id + ": " + what), kind_(kind),
      record_id_(std::move(record_id))
{
}

namespace {

using K = CurationError::Kind;

// Independent stream per (seed, record, rule) so adding a rule never
// shifts another rule's draws.
SplitMix64 rule_rng(std::uint64_t seed, const std::string& id, CurationRule rule)
{
    return SplitMix64(mix64(seed) ^ fnv1a64(id + "/" + std::string(to_string(rule))));
}

std::vector<std::string> string_list(const toml::table& t, std::string_view key, std::vector<std::string> fallback)
{
    const auto* node = t.get(key);
    if (!node) {
        return fallback;
    }
    const auto* arr = node->as_array();
    if (!arr) {
        throw std::invalid_argument(std::string(key) + " must be an array of strings");
    }
    std::vector<std::string> out;
    for (const auto& v : *arr) {
        const auto s = v.value<std::string>();
        if (!s) {
            throw std::invalid_argument(std::string(key) + " must be an array of strings");
        }
        out.push_back(*s);
    }
    if (out.empty()) {
        throw std::invalid_argument(std::string(key) + " must not be empty");
    }
    return out;
}

std::string string_value(const toml::table& t, std::string_view key, std::string fallback)
{
    const auto* node = t.get(key);
    if (!node) {
        return fallback;
    }
    const auto s = node->value<std::string>();
    if (!s) {
        throw std::invalid_argument(std::string(key) + " must be a string");
    }
    return *s;
}

TrainingInstance instance(const TrajectoryRecord& r, CurationRule rule, std::size_t frame, std::string user,
                          std::string target)
{
    return TrainingInstance{r.id, rule, frame, r.frames.empty() ? std::string() : r.frames.at(frame), std::move(user),
                            std::move(target)};
}

std::string render(const TrajectoryRecord& r, const StructuredOutput& out)
{
    try {
        return serialize(out);
    } catch (const GrammarError& e) {
        throw CurationError(K::target_invalid, r.id, std::string("cannot build target: ") + e.what());
    }
}

void check_target(const TrainingInstance& t)
{
    try {
        const auto parsed = parse_structured_output(t.target, ParseMode::strict);
        if (serialize(parsed) != t.target) {
            throw CurationError(K::target_invalid, t.record_id, "target is not canonical: " + t.target);
        }
    } catch (const GrammarError& e) {
        throw CurationError(K::target_invalid, t.record_id, std::string("target fails strict parse: ") + e.what());
    }
}

} // namespace

CurationConfig curation_config_from_toml(std::string_view text)
{
    toml::table doc;
    try {
        doc = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw std::invalid_argument(std::string("rules config: ") + std::string(e.description()));
    }
    CurationConfig c;
    const auto* rules = doc["rules"].as_table();
    if (!rules) {
        return c;
    }
    if (const auto* eps = rules->get("epsilon_act")) {
        const auto v = eps->value<double>();
        if (!v || *v <= 0.0) {
            throw std::invalid_argument("epsilon_act must be a positive number");
        }
        c.epsilon_act = *v;
    }
    c.confirmations = string_list(*rules, "confirmations", c.confirmations);
    c.stop_phrases = string_list(*rules, "stop_phrases", c.stop_phrases);
    c.halt_reply = string_value(*rules, "halt_reply", c.halt_reply);
    c.end_reply = string_value(*rules, "end_reply", c.end_reply);
    return c;
}

CurationConfig load_curation_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw CurationError(K::io_failure, "", "cannot read " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return curation_config_from_toml(buf.str());
}

TrajectoryRecord record_from_json(const nlohmann::json& j)
{
    TrajectoryRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "question") {
            r.kind = RecordKind::question;
        } else if (kind == "manipulation") {
            r.kind = RecordKind::manipulation;
        } else {
            throw CurationError(K::invalid_record, r.id, "unknown kind " + kind);
        }
        r.instruction = j.at("instruction").get<std::string>();
        r.frames = j.at("frames").get<std::vector<std::string>>();
        r.action_magnitude = j.at("action_magnitude").get<std::vector<double>>();
        r.success = j.value("success", false);
        if (j.contains("completion_frame") && !j["completion_frame"].is_null()) {
            r.completion_frame = j["completion_frame"].get<std::size_t>();
        }
        if (j.contains("answer") && !j["answer"].is_null()) {
            r.answer = j["answer"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw CurationError(K::invalid_record, r.id, e.what());
    }
    if (r.id.empty()) {
        throw CurationError(K::invalid_record, r.id, "empty id");
    }
    if (r.action_magnitude.size() != r.frames.size()) {
        throw CurationError(K::invalid_record, r.id, "action_magnitude length differs from frames");
    }
    if (r.completion_frame && *r.completion_frame >= r.frames.size()) {
        throw CurationError(K::invalid_record, r.id, "completion_frame out of range");
    }
    if (r.kind == RecordKind::manipulation && r.success && !r.completion_frame) {
        throw CurationError(K::invalid_record, r.id, "successful manipulation needs completion_frame");
    }
    return r;
}

Json to_json(const TrajectoryRecord& r)
{
    Json j{{"id", r.id},
           {"kind", r.kind == RecordKind::question ? "question" : "manipulation"},
           {"instruction", r.instruction},
           {"frames", r.frames},
           {"action_magnitude", r.action_magnitude},
           {"success", r.success}};
    if (r.completion_frame) {
        j["completion_frame"] = *r.completion_frame;
    }
    if (r.answer) {
        j["answer"] = *r.answer;
    }
    return j;
}

Json to_json(const TrainingInstance& t)
{
    return Json{{"record", t.record_id}, {"rule", to_string(t.rule)}, {"frame_index", t.frame_index},
                {"frame", t.frame},      {"user", t.user_text},       {"target", t.target}};
}

std::string clean_instruction(std::string_view instruction)
{
    std::string out;
    bool gap = false;
    for (char ch : instruction) {
        if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v') {
            gap = !out.empty();
            continue;
        }
        if (gap) {
            out += ' ';
            gap = false;
        }
        out += ch;
    }
    return out;
}

TrainingInstance annotate_res(const TrajectoryRecord& record, double epsilon_act)
{
    if (record.kind != RecordKind::question) {
        throw CurationError(K::not_a_question, record.id, "record is not a question");
    }
    const auto peak = record.action_magnitude.empty()
                          ? 0.0
                          : *std::max_element(record.action_magnitude.begin(), record.action_magnitude.end());
    if (peak >= epsilon_act) {
        throw CurationError(K::not_a_question, record.id, "significant motion in a question record");
    }
    StructuredOutput out;
    out.control = ControlToken::res;
    out.speech = clean_instruction(record.answer.value_or(""));
    return instance(record, CurationRule::res, 0, record.instruction, render(record, out));
}

TrainingInstance annotate_act(const TrajectoryRecord& record, const std::vector<std::string>& confirmations,
                              std::uint64_t seed)
{
    if (record.kind != RecordKind::manipulation) {
        throw CurationError(K::not_manipulation, record.id, "record is not a manipulation");
    }
    if (confirmations.empty()) {
        throw std::invalid_argument("confirmation pool is empty");
    }
    const auto instruction = clean_instruction(record.instruction);
    if (instruction.empty()) {
        throw CurationError(K::invalid_record, record.id, "empty instruction");
    }
    auto rng = rule_rng(seed, record.id, CurationRule::act);
    StructuredOutput out;
    out.control = ControlToken::act;
    out.speech = confirmations[rng.uniform_index(confirmations.size())];
    out.action_instruction = instruction;
    return instance(record, CurationRule::act, 0, record.instruction, render(record, out));
}

TrainingInstance synthesize_interrupt(const TrajectoryRecord& record, const std::vector<std::string>& stop_phrases,
                                      std::uint64_t seed, const std::string& reply)
{
    if (record.kind != RecordKind::manipulation) {
        throw CurationError(K::not_manipulation, record.id, "record is not a manipulation");
    }
    if (record.frames.size() < 3) {
        throw CurationError(K::too_short, record.id, "need at least 3 frames to interrupt");
    }
    if (stop_phrases.empty()) {
        throw std::invalid_argument("stop phrase pool is empty");
    }
    auto rng = rule_rng(seed, record.id, CurationRule::halt);
    const auto frame = 1 + rng.uniform_index(record.frames.size() - 2);
    const auto& phrase = stop_phrases[rng.uniform_index(stop_phrases.size())];
    StructuredOutput out;
    out.control = ControlToken::halt;
    out.speech = reply;
    return instance(record, CurationRule::halt, frame, phrase, render(record, out));
}

std::vector<TrainingInstance> annotate_end(const TrajectoryRecord& record, const std::string& reply)
{
    if (!record.success || !record.completion_frame) {
        throw CurationError(K::not_successful, record.id, "record did not complete");
    }
    StructuredOutput out;
    out.control = ControlToken::end;
    out.speech = reply;
    const auto target = render(record, out);
    std::vector<TrainingInstance> result;
    for (std::size_t i = *record.completion_frame; i < record.frames.size(); ++i) {
        result.push_back(instance(record, CurationRule::end, i, record.instruction, target));
    }
    return result;
}

Json to_json(const CurationStats& stats)
{
    Json emitted = Json::object();
    for (const auto& [k, v] : stats.emitted) {
        emitted[k] = v;
    }
    Json skipped = Json::object();
    for (const auto& [k, v] : stats.skipped) {
        skipped[k] = v;
    }
    return Json{{"records", stats.records}, {"emitted", std::move(emitted)}, {"skipped", std::move(skipped)}};
}

std::vector<TrainingInstance> curate(std::vector<TrajectoryRecord> records, const CurationConfig& config,
                                     std::uint64_t seed, CurationStats* stats)
{
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].id == records[i - 1].id) {
            throw CurationError(K::invalid_record, records[i].id, "duplicate record id");
        }
    }
    CurationStats local;
    for (const char* rule : {"res", "act", "halt", "end"}) {
        local.emitted[rule] = 0;
    }
    std::vector<TrainingInstance> out;
    auto emit = [&](TrainingInstance t) {
        check_target(t);
        ++local.emitted[std::string(to_string(t.rule))];
        out.push_back(std::move(t));
    };
    auto skip = [&](const CurationError& e) { ++local.skipped[std::string(to_string(e.kind()))]; };
    for (const auto& r : records) {
        ++local.records;
        if (r.kind == RecordKind::question) {
            try {
                emit(annotate_res(r, config.epsilon_act));
            } catch (const CurationError& e) {
                if (e.kind() == K::target_invalid) {
                    throw;
                }
                skip(e);
            }
            continue;
        }
        emit(annotate_act(r, config.confirmations, seed));
        try {
            emit(synthesize_interrupt(r, config.stop_phrases, seed, config.halt_reply));
        } catch (const CurationError& e) {
            if (e.kind() == K::target_invalid) {
                throw;
            }
            skip(e);
        }
        if (r.success) {
            for (auto& t : annotate_end(r, config.end_reply)) {
                emit(std::move(t));
            }
        } else {
            ++local.skipped["not_successful"];
        }
    }
    if (stats) {
        *stats = std::move(local);
    }
    return out;
}

std::vector<TrajectoryRecord> read_corpus(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw CurationError(K::io_failure, "", "cannot read " + path.string());
    }
    std::vector<TrajectoryRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw CurationError(K::invalid_record, "", "line " + std::to_string(lineno) + ": " + e.what());
        }
        records.push_back(record_from_json(j));
    }
    return records;
}

std::string to_jsonl(const std::vector<TrainingInstance>& instances)
{
    std::string out;
    for (const auto& t : instances) {
        out += to_json(t).dump();
        out += '\n';
    }
    return out;
}

CurationStats run_pipeline(const std::filesystem::path& corpus, const std::filesystem::path& out,
                           const CurationConfig& config, std::uint64_t seed)
{
    CurationStats stats;
    const auto text = to_jsonl(curate(read_corpus(corpus), config, seed, &stats));
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw CurationError(K::io_failure, "", "cannot write " + out.string());
    }
    f << text;
    if (!f.flush()) {
        throw CurationError(K::io_failure, "", "write failed for " + out.string());
    }
    return stats;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir)
{
    PromptLibrary lib;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        if (entry.path().extension() != ".txt") {
            continue;
        }
        std::ifstream in(entry.path());
        std::stringstream buf;
        buf << in.rdbuf();
        lib.templates_[entry.path().stem().string()] = buf.str();
    }
    if (ec) {
        throw CurationError(K::io_failure, "", "cannot list " + dir.string());
    }
    return lib;
}

std::vector<std::string> PromptLibrary::names() const
{
    std::vector<std::string> out;
    for (const auto& [k, v] : templates_) {
        out.push_back(k);
    }
    return out;
}

const std::string& PromptLibrary::raw(const std::string& name) const
{
    const auto it = templates_.find(name);
    if (it == templates_.end()) {
        throw std::out_of_range("no prompt template " + name);
    }
    return it->second;
}

namespace {
const std::regex& slot_pattern()
{
    static const std::regex re(R"(\{\{([a-z_]+)\}\})");
    return re;
}
} // namespace

std::vector<std::string> PromptLibrary::slots(const std::string& name) const
{
    const auto& text = raw(name);
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (std::sregex_iterator it(text.begin(), text.end(), slot_pattern()), end; it != end; ++it) {
        if (seen.insert((*it)[1]).second) {
            out.push_back((*it)[1]);
        }
    }
    return out;
}

std::string PromptLibrary::render(const std::string& name, const std::map<std::string, std::string>& values) const
{
    const auto& text = raw(name);
    std::string out;
    std::size_t last = 0;
    for (std::sregex_iterator it(text.begin(), text.end(), slot_pattern()), end; it != end; ++it) {
        const auto v = values.find((*it)[1]);
        if (v == values.end()) {
            throw std::invalid_argument("prompt " + name + " needs a value for " + std::string((*it)[1]));
        }
        out.append(text, last, static_cast<std::size_t>(it->position()) - last);
        out += v->second;
        last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(text, last);
    return out;
}

} // namespace twincore
