#include "twincore/wire.hpp"

#include <type_traits>

namespace twincore::wire {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Json joints(const JointVector& q)
{
    Json a = Json::array();
    for (double v : q) {
        a.push_back(v);
    }
    return a;
}

JointVector joints_of(const Json& j)
{
    if (!j.is_array() || j.size() != kJointDim) {
        throw MalformedFrame("joint vector must have 26 entries");
    }
    JointVector q{};
    for (std::size_t i = 0; i < kJointDim; ++i) {
        if (!j[i].is_number()) {
            throw MalformedFrame("joint entry is not a number");
        }
        q[i] = j[i].get<double>();
    }
    return q;
}

template <class T>
T field(const Json& j, const char* key)
{
    if (!j.contains(key)) {
        throw MalformedFrame(std::string("missing field \"") + key + "\"");
    }
    const auto& v = j.at(key);
    if constexpr (std::is_integral_v<T>) {
        const bool ok = std::is_unsigned_v<T> ? v.is_number_unsigned() : v.is_number_integer();
        if (!ok) {
            throw MalformedFrame(std::string("bad field \"") + key + "\"");
        }
    }
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw MalformedFrame(std::string("bad field \"") + key + "\"");
    }
}

} // namespace

std::string_view type_name(const Frame& frame)
{
    return std::visit(overloaded{
                          [](const Utterance&) { return std::string_view("utterance"); },
                          [](const SpeechDelta&) { return std::string_view("speech_delta"); },
                          [](const SpeechEnd&) { return std::string_view("speech_end"); },
                          [](const Chunk&) { return std::string_view("chunk"); },
                          [](const Halt&) { return std::string_view("halt"); },
                          [](const State&) { return std::string_view("state"); },
                          [](const Ack&) { return std::string_view("chunk_ack"); },
                          [](const Log&) { return std::string_view("log"); },
                      },
                      frame);
}

Json to_json(const Frame& frame)
{
    return std::visit(
        overloaded{
            [](const Utterance& f) { return Json{{"type", "utterance"}, {"text", f.text}, {"ts", f.ts}}; },
            [](const SpeechDelta& f) {
                return Json{{"type", "speech_delta"}, {"core", f.core}, {"text", f.text}, {"ts", f.ts}};
            },
            [](const SpeechEnd& f) {
                return Json{{"type", "speech_end"},
                            {"core", f.core},
                            {"reason", f.reason == SpeechEnd::Reason::done ? "done" : "interrupted"},
                            {"ts", f.ts}};
            },
            [](const Chunk& f) {
                Json steps = Json::array();
                for (const auto& s : f.chunk.steps) {
                    steps.push_back(joints(s));
                }
                return Json{{"type", "chunk"},       {"chunk_id", f.chunk.chunk_id}, {"epoch", f.chunk.epoch},
                            {"rate_hz", f.chunk.rate_hz}, {"steps", std::move(steps)},  {"ts", f.ts}};
            },
            [](const Halt& f) { return Json{{"type", "halt"}, {"epoch", f.epoch}, {"ts", f.ts}}; },
            [](const State& f) {
                Json j{{"type", "state"}, {"q", joints(f.state.q)}, {"tick", f.state.tick}, {"ts", f.ts}};
                j["moving"] = f.state.moving;
                if (f.scene) {
                    j["scene"] = Json::parse(twincore::to_json(*f.scene).dump());
                }
                return j;
            },
            [](const Ack& f) {
                return Json{{"type", "chunk_ack"},
                            {"chunk_id", f.ack.chunk_id},
                            {"executed_steps", f.ack.executed_steps},
                            {"ts", f.ts}};
            },
            [](const Log& f) {
                Json j{{"type", "log"}};
                for (const auto& [k, v] : f.record.items()) {
                    j[k] = v;
                }
                return j;
            },
        },
        frame);
}

std::string serialize(const Frame& frame)
{
    return to_json(frame).dump();
}

Frame frame_from_json(const Json& j)
{
    if (!j.is_object()) {
        throw MalformedFrame("frame is not an object");
    }
    const auto type = field<std::string>(j, "type");
    if (type == "utterance") {
        return Utterance{field<std::string>(j, "text"), field<std::int64_t>(j, "ts")};
    }
    if (type == "speech_delta") {
        return SpeechDelta{field<int>(j, "core"), field<std::string>(j, "text"), field<std::int64_t>(j, "ts")};
    }
    if (type == "speech_end") {
        const auto reason = field<std::string>(j, "reason");
        if (reason != "done" && reason != "interrupted") {
            throw MalformedFrame("bad speech_end reason");
        }
        return SpeechEnd{field<int>(j, "core"),
                         reason == "done" ? SpeechEnd::Reason::done : SpeechEnd::Reason::interrupted,
                         field<std::int64_t>(j, "ts")};
    }
    if (type == "chunk") {
        Chunk c;
        c.chunk.chunk_id = field<std::uint64_t>(j, "chunk_id");
        c.chunk.epoch = field<Epoch>(j, "epoch");
        c.chunk.rate_hz = field<int>(j, "rate_hz");
        const auto& steps = j.contains("steps") ? j["steps"] : Json();
        if (!steps.is_array() || steps.size() > kChunkSteps) {
            throw MalformedFrame("chunk steps must be an array of at most 16 poses");
        }
        for (const auto& s : steps) {
            c.chunk.steps.push_back(joints_of(s));
        }
        c.ts = field<std::int64_t>(j, "ts");
        return c;
    }
    if (type == "halt") {
        return Halt{field<Epoch>(j, "epoch"), field<std::int64_t>(j, "ts")};
    }
    if (type == "state") {
        State s;
        s.state.q = joints_of(j.contains("q") ? j["q"] : Json());
        s.state.tick = field<std::uint64_t>(j, "tick");
        s.state.moving = j.contains("moving") && j["moving"].is_boolean() && j["moving"].get<bool>();
        if (j.contains("scene")) {
            try {
                s.scene = scene_from_json(nlohmann::json::parse(j["scene"].dump()));
            } catch (const std::exception& e) {
                throw MalformedFrame(std::string("bad scene: ") + e.what());
            }
        }
        s.ts = field<std::int64_t>(j, "ts");
        return s;
    }
    if (type == "chunk_ack") {
        const auto executed = field<std::uint32_t>(j, "executed_steps");
        if (executed > kChunkSteps) {
            throw MalformedFrame("executed_steps exceeds chunk length");
        }
        return Ack{ChunkAck{field<std::uint64_t>(j, "chunk_id"), executed}, field<std::int64_t>(j, "ts")};
    }
    if (type == "log") {
        Log l;
        l.record = Json::object();
        for (const auto& [k, v] : j.items()) {
            if (k != "type") {
                l.record[k] = v;
            }
        }
        return l;
    }
    throw MalformedFrame("unknown frame type \"" + type + "\"");
}

Frame parse_frame(std::string_view text)
{
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedFrame(std::string("invalid JSON: ") + e.what());
    }
    return frame_from_json(j);
}

bool RobotOutbox::push_chunk(const Chunk& chunk)
{
    std::lock_guard lock(mutex_);
    if (fenced_ && chunk.chunk.epoch < fence_) {
        ++dropped_;
        return false;
    }
    chunks_.push_back(chunk);
    return true;
}

std::vector<std::uint64_t> RobotOutbox::push_halt(const Halt& halt)
{
    std::lock_guard lock(mutex_);
    if (!fenced_ || halt.epoch > fence_) {
        fence_ = halt.epoch;
        fenced_ = true;
    }
    halts_.push_back(halt);
    std::vector<std::uint64_t> removed;
    std::deque<Chunk> kept;
    for (auto& c : chunks_) {
        if (c.chunk.epoch < fence_) {
            removed.push_back(c.chunk.chunk_id);
        } else {
            kept.push_back(std::move(c));
        }
    }
    chunks_.swap(kept);
    dropped_ += removed.size();
    return removed;
}

std::vector<Frame> RobotOutbox::drain()
{
    std::lock_guard lock(mutex_);
    std::vector<Frame> out;
    for (auto& h : halts_) {
        out.emplace_back(h);
    }
    for (auto& c : chunks_) {
        out.emplace_back(std::move(c));
    }
    halts_.clear();
    chunks_.clear();
    return out;
}

bool RobotOutbox::empty() const
{
    std::lock_guard lock(mutex_);
    return halts_.empty() && chunks_.empty();
}

std::uint64_t RobotOutbox::dropped() const
{
    std::lock_guard lock(mutex_);
    return dropped_;
}

} // namespace twincore::wire
