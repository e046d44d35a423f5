#pragma once

// JSON frames exchanged between user clients, the server and the robot.
// One object per frame with "type" first; field names are fixed.

#include "twincore/chunk.hpp"
#include "twincore/scene.hpp"

#include <nlohmann/json.hpp>

#include <deque>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace twincore::wire {

using Json = nlohmann::ordered_json;

struct Utterance {
    std::string text;
    std::int64_t ts = 0;
    friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct SpeechDelta {
    int core = 0;
    std::string text;
    std::int64_t ts = 0;
    friend bool operator==(const SpeechDelta&, const SpeechDelta&) = default;
};

struct SpeechEnd {
    enum class Reason { done, interrupted };
    int core = 0;
    Reason reason = Reason::done;
    std::int64_t ts = 0;
    friend bool operator==(const SpeechEnd&, const SpeechEnd&) = default;
};

struct Chunk {
    ActionChunk chunk;
    std::int64_t ts = 0;
    friend bool operator==(const Chunk&, const Chunk&) = default;
};

struct Halt {
    Epoch epoch = 0;
    std::int64_t ts = 0;
    friend bool operator==(const Halt&, const Halt&) = default;
};

// "moving" and "scene" are optional additions; readers default them.
struct State {
    RobotState state;
    std::optional<SceneSnapshot> scene;
    std::int64_t ts = 0;
    friend bool operator==(const State&, const State&) = default;
};

struct Ack {
    ChunkAck ack;
    std::int64_t ts = 0;
    friend bool operator==(const Ack&, const Ack&) = default;
};

// Observer stream: a session-log record with "type":"log" prepended.
struct Log {
    Json record;
    friend bool operator==(const Log&, const Log&) = default;
};

using Frame = std::variant<Utterance, SpeechDelta, SpeechEnd, Chunk, Halt, State, Ack, Log>;

class MalformedFrame : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Json to_json(const Frame& frame);
std::string serialize(const Frame& frame);
Frame parse_frame(std::string_view text);
Frame frame_from_json(const Json& j);

std::string_view type_name(const Frame& frame);

// Server-side queue toward one robot. Halts travel in a priority lane and
// overtake queued chunks; a halt also drops queued chunks from older
// epochs, and later-arriving chunks older than the newest halt are dropped
// on entry. Thread-safe.
class RobotOutbox {
public:
    // False if the chunk was dropped as stale.
    bool push_chunk(const Chunk& chunk);
    // Ids of queued chunks this halt dropped.
    std::vector<std::uint64_t> push_halt(const Halt& halt);
    // Everything pending, halts first, then chunks in FIFO order.
    std::vector<Frame> drain();
    bool empty() const;
    std::uint64_t dropped() const;

private:
    mutable std::mutex mutex_;
    std::deque<Halt> halts_;
    std::deque<Chunk> chunks_;
    Epoch fence_ = 0;
    bool fenced_ = false;
    std::uint64_t dropped_ = 0;
};

} // namespace twincore::wire
