#include "twincore/grammar.hpp"

#include <array>
#include <utility>

namespace twincore {

namespace {

struct LexemeEntry {
    std::string_view text;
    ControlToken token;
};

constexpr std::array<LexemeEntry, 4> kLeading{{
    {"[RES]", ControlToken::res},
    {"[ACT]", ControlToken::act},
    {"[HALT]", ControlToken::halt},
    {"[END]", ControlToken::end},
}};

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front())) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(s.back())) {
        s.remove_suffix(1);
    }
    return s;
}

std::size_t rtrimmed_length(std::string_view s)
{
    std::size_t n = s.size();
    while (n > 0 && is_space(s[n - 1])) {
        --n;
    }
    return n;
}

// Largest n' <= n such that s[0, n') does not end inside a UTF-8 sequence.
std::size_t utf8_safe_length(std::string_view s, std::size_t n)
{
    for (std::size_t back = 1; back <= 3 && back <= n; ++back) {
        const auto b = static_cast<unsigned char>(s[n - back]);
        if ((b & 0xC0) == 0x80) {
            continue;
        }
        std::size_t need = 1;
        if ((b & 0xE0) == 0xC0) {
            need = 2;
        } else if ((b & 0xF0) == 0xE0) {
            need = 3;
        } else if ((b & 0xF8) == 0xF0) {
            need = 4;
        }
        return need > back ? n - back : n;
    }
    return n;
}

enum class Match { none, prefix, full };

struct LexMatch {
    Match match = Match::none;
    bool inst = false;
    ControlToken token = ControlToken::res;
    std::size_t length = 0;
};

// Classifies the bytes starting at a '['. `prefix` means `s` is a proper
// prefix of some candidate lexeme and more input could complete it.
LexMatch match_lexeme(std::string_view s, bool leading_only)
{
    LexMatch best;
    auto consider = [&](std::string_view lex, bool inst, ControlToken token) {
        if (s.size() >= lex.size() && s.substr(0, lex.size()) == lex) {
            best = {Match::full, inst, token, lex.size()};
        } else if (s.size() < lex.size() && lex.substr(0, s.size()) == s && best.match == Match::none) {
            best.match = Match::prefix;
        }
    };
    for (const auto& entry : kLeading) {
        consider(entry.text, false, entry.token);
        if (best.match == Match::full) {
            return best;
        }
    }
    if (!leading_only) {
        consider(kInstLexeme, true, ControlToken::res);
    }
    return best;
}

struct LexedToken {
    std::size_t pos;
    std::size_t length;
    bool inst;
    ControlToken token;
};

std::vector<LexedToken> lex_tokens(std::string_view raw)
{
    std::vector<LexedToken> tokens;
    std::size_t pos = 0;
    while ((pos = raw.find('[', pos)) != std::string_view::npos) {
        const auto m = match_lexeme(raw.substr(pos), false);
        if (m.match == Match::full) {
            tokens.push_back({pos, m.length, m.inst, m.token});
            pos += m.length;
        } else {
            ++pos;
        }
    }
    return tokens;
}

} // namespace

std::string_view lexeme(ControlToken token)
{
    for (const auto& entry : kLeading) {
        if (entry.token == token) {
            return entry.text;
        }
    }
    return "[RES]";
}

std::string_view to_string(ControlToken token)
{
    switch (token) {
    case ControlToken::res: return "RES";
    case ControlToken::act: return "ACT";
    case ControlToken::halt: return "HALT";
    case ControlToken::end: return "END";
    }
    return "RES";
}

std::optional<ControlToken> control_token_from_string(std::string_view name)
{
    for (auto token : {ControlToken::res, ControlToken::act, ControlToken::halt, ControlToken::end}) {
        if (to_string(token) == name) {
            return token;
        }
    }
    return std::nullopt;
}

std::string_view to_string(GrammarErrorKind kind)
{
    switch (kind) {
    case GrammarErrorKind::missing_leading_token: return "MissingLeadingToken";
    case GrammarErrorKind::dangling_inst: return "DanglingInst";
    case GrammarErrorKind::duplicate_token: return "DuplicateToken";
    case GrammarErrorKind::empty_instruction: return "EmptyInstruction";
    case GrammarErrorKind::invariant_violation: return "InvariantViolation";
    }
    return "InvariantViolation";
}

GrammarError::GrammarError(GrammarErrorKind kind, std::size_t offset, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " + what)
    , kind_(kind)
    , offset_(offset)
{
}

StructuredOutput parse_structured_output(std::string_view raw, ParseMode mode)
{
    const auto tokens = lex_tokens(raw);
    std::size_t first_text = 0;
    while (first_text < raw.size() && is_space(raw[first_text])) {
        ++first_text;
    }

    StructuredOutput out;
    std::size_t body_begin = 0;
    std::size_t next_token = 0;
    if (!tokens.empty() && tokens.front().pos == first_text && !tokens.front().inst) {
        out.control = tokens.front().token;
        body_begin = tokens.front().pos + tokens.front().length;
        next_token = 1;
    } else if (mode == ParseMode::strict) {
        throw GrammarError(GrammarErrorKind::missing_leading_token, first_text, "output must begin with a control token");
    }

    const LexedToken* inst = nullptr;
    for (std::size_t i = next_token; i < tokens.size(); ++i) {
        const auto& tok = tokens[i];
        if (!tok.inst) {
            throw GrammarError(GrammarErrorKind::duplicate_token, tok.pos, "second control token in one output");
        }
        if (out.control != ControlToken::act) {
            throw GrammarError(GrammarErrorKind::dangling_inst, tok.pos, "[INST] outside an [ACT] output");
        }
        if (inst != nullptr) {
            throw GrammarError(GrammarErrorKind::duplicate_token, tok.pos, "second [INST]");
        }
        inst = &tok;
    }

    const std::size_t speech_end = inst ? inst->pos : raw.size();
    out.speech = std::string(trim(raw.substr(body_begin, speech_end - body_begin)));
    if (out.control == ControlToken::act) {
        if (inst == nullptr) {
            throw GrammarError(GrammarErrorKind::empty_instruction, raw.size(), "[ACT] output without [INST]");
        }
        auto instruction = trim(raw.substr(inst->pos + inst->length));
        if (instruction.empty()) {
            throw GrammarError(GrammarErrorKind::empty_instruction, raw.size(), "empty action instruction");
        }
        out.action_instruction = std::string(instruction);
    }
    return out;
}

void validate(const StructuredOutput& output)
{
    auto check_field = [](std::string_view field, std::string_view name) {
        if (trim(field).size() != field.size()) {
            throw GrammarError(GrammarErrorKind::invariant_violation, 0, std::string(name) + " has surrounding whitespace");
        }
        if (!lex_tokens(field).empty()) {
            throw GrammarError(GrammarErrorKind::invariant_violation, 0, std::string(name) + " contains a control lexeme");
        }
    };
    check_field(output.speech, "speech");
    if (output.control == ControlToken::act) {
        if (!output.action_instruction || output.action_instruction->empty()) {
            throw GrammarError(GrammarErrorKind::invariant_violation, 0, "[ACT] output requires an instruction");
        }
        check_field(*output.action_instruction, "instruction");
    } else if (output.action_instruction) {
        throw GrammarError(GrammarErrorKind::invariant_violation, 0, "instruction present on a non-[ACT] output");
    }
}

std::string serialize(const StructuredOutput& output)
{
    validate(output);
    std::string text(lexeme(output.control));
    if (!output.speech.empty()) {
        text += ' ';
        text += output.speech;
    }
    if (output.control == ControlToken::act) {
        text += ' ';
        text += kInstLexeme;
        text += ' ';
        text += *output.action_instruction;
    }
    return text;
}

StreamEvent StreamEvent::control_detected(ControlToken token, std::size_t begin, std::size_t end)
{
    StreamEvent e;
    e.kind = Kind::control_detected;
    e.control = token;
    e.begin = begin;
    e.end = end;
    return e;
}

StreamEvent StreamEvent::speech_delta(std::string text, std::size_t begin, std::size_t end)
{
    StreamEvent e;
    e.kind = Kind::speech_delta;
    e.text = std::move(text);
    e.begin = begin;
    e.end = end;
    return e;
}

StreamEvent StreamEvent::instruction_delta(std::string text, std::size_t begin, std::size_t end)
{
    auto e = speech_delta(std::move(text), begin, end);
    e.kind = Kind::instruction_delta;
    return e;
}

StreamEvent StreamEvent::finalized(StructuredOutput output, std::size_t total)
{
    StreamEvent e;
    e.kind = Kind::finalized;
    e.control = output.control;
    e.output = std::move(output);
    e.begin = 0;
    e.end = total;
    return e;
}

std::vector<StreamEvent> StreamParser::feed(std::string_view fragment)
{
    if (phase_ == Phase::failed) {
        throw *error_;
    }
    std::vector<StreamEvent> out;
    if (phase_ == Phase::done) {
        return out;
    }
    buffer_.append(fragment);
    run(out, false);
    return out;
}

std::vector<StreamEvent> StreamParser::finish()
{
    if (phase_ == Phase::failed) {
        throw *error_;
    }
    std::vector<StreamEvent> out;
    if (phase_ == Phase::done) {
        return out;
    }
    run(out, true);
    const std::size_t total = buffer_offset_ + buffer_.size();
    if (control_ == ControlToken::act) {
        if (phase_ != Phase::instruction) {
            fail(GrammarErrorKind::empty_instruction, total, "[ACT] output without [INST]");
        }
        if (instruction_.empty()) {
            fail(GrammarErrorKind::empty_instruction, total, "empty action instruction");
        }
    }
    StructuredOutput result;
    result.control = control_;
    result.speech = speech_;
    if (control_ == ControlToken::act) {
        result.action_instruction = instruction_;
    }
    out.push_back(StreamEvent::finalized(std::move(result), total));
    phase_ = Phase::done;
    return out;
}

void StreamParser::run(std::vector<StreamEvent>& out, bool at_end)
{
    if (phase_ == Phase::leading) {
        run_leading(out, at_end);
    }
    while ((phase_ == Phase::speech || phase_ == Phase::instruction) && run_body(out, at_end)) {
    }
}

void StreamParser::run_leading(std::vector<StreamEvent>& out, bool at_end)
{
    std::size_t ws = 0;
    while (ws < buffer_.size() && is_space(buffer_[ws])) {
        ++ws;
    }
    consume(ws);
    if (buffer_.empty() && !at_end) {
        return;
    }
    if (!buffer_.empty() && buffer_.front() == '[') {
        const auto m = match_lexeme(buffer_, true);
        if (m.match == Match::full) {
            out.push_back(StreamEvent::control_detected(m.token, buffer_offset_, buffer_offset_ + m.length));
            control_ = m.token;
            consume(m.length);
            phase_ = Phase::speech;
            field_start_ = true;
            return;
        }
        if (m.match == Match::prefix && !at_end) {
            return;
        }
    }
    if (mode_ == ParseMode::strict) {
        fail(GrammarErrorKind::missing_leading_token, buffer_offset_, "output must begin with a control token");
    }
    control_ = ControlToken::res;
    out.push_back(StreamEvent::control_detected(ControlToken::res, buffer_offset_, buffer_offset_));
    phase_ = Phase::speech;
    field_start_ = true;
}

bool StreamParser::run_body(std::vector<StreamEvent>& out, bool at_end)
{
    if (field_start_) {
        std::size_t ws = 0;
        while (ws < buffer_.size() && is_space(buffer_[ws])) {
            ++ws;
        }
        consume(ws);
    }

    std::size_t i = 0;
    while (i < buffer_.size()) {
        if (buffer_[i] != '[') {
            ++i;
            continue;
        }
        const auto m = match_lexeme(std::string_view(buffer_).substr(i), false);
        if (m.match == Match::prefix && !at_end) {
            break;
        }
        if (m.match != Match::full) {
            ++i;
            continue;
        }

        // Text before the token is final; whitespace adjoining the token is trimmed.
        const std::size_t keep = rtrimmed_length(std::string_view(buffer_).substr(0, i));
        emit_text(out, keep);
        consume(i - keep);
        const std::size_t offset = buffer_offset_;
        if (!m.inst) {
            fail(GrammarErrorKind::duplicate_token, offset, "second control token in one output");
        }
        if (phase_ == Phase::instruction) {
            fail(GrammarErrorKind::duplicate_token, offset, "second [INST]");
        }
        if (control_ != ControlToken::act) {
            fail(GrammarErrorKind::dangling_inst, offset, "[INST] outside an [ACT] output");
        }
        consume(m.length);
        phase_ = Phase::instruction;
        field_start_ = true;
        return true;
    }

    std::size_t emit = rtrimmed_length(std::string_view(buffer_).substr(0, i));
    if (!at_end) {
        emit = utf8_safe_length(buffer_, emit);
    }
    emit_text(out, emit);
    if (at_end) {
        consume(buffer_.size());
    }
    return false;
}

void StreamParser::emit_text(std::vector<StreamEvent>& out, std::size_t count)
{
    if (count == 0) {
        return;
    }
    std::string text = buffer_.substr(0, count);
    const std::size_t begin = buffer_offset_;
    if (phase_ == Phase::speech) {
        speech_ += text;
        out.push_back(StreamEvent::speech_delta(std::move(text), begin, begin + count));
    } else {
        instruction_ += text;
        out.push_back(StreamEvent::instruction_delta(std::move(text), begin, begin + count));
    }
    field_start_ = false;
    consume(count);
}

void StreamParser::consume(std::size_t count)
{
    buffer_.erase(0, count);
    buffer_offset_ += count;
}

void StreamParser::fail(GrammarErrorKind kind, std::size_t offset, const std::string& what)
{
    phase_ = Phase::failed;
    error_.emplace(kind, offset, what);
    throw *error_;
}

} // namespace twincore
