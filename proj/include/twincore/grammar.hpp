#pragma once

// Control-token language emitted by the policy model.
//
// A structured output is one leading token followed by speech; an ACT-led
// output additionally carries "[INST]" and the action instruction:
//
//   [RES] I see an apple on the table.
//   [ACT] Okay, I will put the toy in the box. [INST] Pick up toy and place in box.
//   [HALT] Stopping immediately.
//   [END] The action is finished.
//
// Only the five exact, case-sensitive lexemes are interpreted; all other
// bytes (including other bracketed text and non-ASCII) are passed through.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace twincore {

enum class ControlToken { res, act, halt, end };

std::string_view lexeme(ControlToken token);
std::string_view to_string(ControlToken token);
std::optional<ControlToken> control_token_from_string(std::string_view name);

inline constexpr std::string_view kInstLexeme = "[INST]";

struct StructuredOutput {
    ControlToken control = ControlToken::res;
    std::string speech;
    // Present iff control == act.
    std::optional<std::string> action_instruction;

    friend bool operator==(const StructuredOutput&, const StructuredOutput&) = default;
};

enum class GrammarErrorKind {
    missing_leading_token,
    dangling_inst,
    duplicate_token,
    empty_instruction,
    invariant_violation,
};

std::string_view to_string(GrammarErrorKind kind);

class GrammarError : public std::runtime_error {
public:
    GrammarError(GrammarErrorKind kind, std::size_t offset, const std::string& what);

    GrammarErrorKind kind() const noexcept { return kind_; }
    // Byte offset in the raw output where the violation became certain.
    std::size_t offset() const noexcept { return offset_; }

private:
    GrammarErrorKind kind_;
    std::size_t offset_;
};

enum class ParseMode {
    strict,
    // Untagged output is treated as [RES].
    lenient,
};

StructuredOutput parse_structured_output(std::string_view raw, ParseMode mode = ParseMode::strict);

// Canonical form: "[TOK] speech" or "[ACT] speech [INST] instruction", with
// the speech omitted (and its separating space) when empty.
std::string serialize(const StructuredOutput& output);

// Throws GrammarError(invariant_violation) if `output` cannot round-trip.
void validate(const StructuredOutput& output);

struct StreamEvent {
    enum class Kind { control_detected, speech_delta, instruction_delta, finalized };

    Kind kind = Kind::speech_delta;
    ControlToken control = ControlToken::res;
    std::string text;
    std::optional<StructuredOutput> output;
    // Byte range of the raw stream this event accounts for.
    std::size_t begin = 0;
    std::size_t end = 0;

    static StreamEvent control_detected(ControlToken token, std::size_t begin, std::size_t end);
    static StreamEvent speech_delta(std::string text, std::size_t begin, std::size_t end);
    static StreamEvent instruction_delta(std::string text, std::size_t begin, std::size_t end);
    static StreamEvent finalized(StructuredOutput output, std::size_t total);
};

// Incremental parser for one model output stream. Events are emitted as soon
// as they are unambiguous: a fragment ending in "[AC" emits nothing for those
// bytes, and trailing whitespace is held back because it may turn out to be
// trimmed. The concatenated deltas equal the batch-parsed fields exactly.
//
// Grammar violations throw GrammarError from the feed() that makes them
// certain; the parser then stays failed and rethrows on further use.
class StreamParser {
public:
    explicit StreamParser(ParseMode mode = ParseMode::strict) : mode_(mode) {}

    std::vector<StreamEvent> feed(std::string_view fragment);
    // End of stream. Flushes held bytes and emits Finalized.
    std::vector<StreamEvent> finish();

    bool control_known() const { return phase_ != Phase::leading && phase_ != Phase::failed; }
    bool finished() const { return phase_ == Phase::done; }

private:
    enum class Phase { leading, speech, instruction, done, failed };

    void run(std::vector<StreamEvent>& out, bool at_end);
    void run_leading(std::vector<StreamEvent>& out, bool at_end);
    bool run_body(std::vector<StreamEvent>& out, bool at_end);
    void emit_text(std::vector<StreamEvent>& out, std::size_t count);
    void consume(std::size_t count);
    [[noreturn]] void fail(GrammarErrorKind kind, std::size_t offset, const std::string& what);

    ParseMode mode_;
    Phase phase_ = Phase::leading;
    std::string buffer_;
    std::size_t buffer_offset_ = 0;
    bool field_start_ = true;
    ControlToken control_ = ControlToken::res;
    std::string speech_;
    std::string instruction_;
    std::optional<GrammarError> error_;
};

} // namespace twincore
