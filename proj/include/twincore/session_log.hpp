#pragma once

#include "twincore/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace twincore {

// One line of the session log: {"ts","epoch","core","event","detail"}.
struct LogRecord {
    std::int64_t ts = 0;
    Epoch epoch = 0;
    std::optional<int> core;
    std::string event;
    nlohmann::ordered_json detail = nlohmann::ordered_json::object();

    friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

nlohmann::ordered_json to_json(const LogRecord& record);
LogRecord log_record_from_json(const nlohmann::ordered_json& j);

class SessionLog {
public:
    using Listener = std::function<void(const LogRecord&)>;

    void append(LogRecord record);
    void add_listener(Listener listener);

    std::vector<LogRecord> records() const;
    std::size_t size() const;
    std::string to_jsonl() const;
    static std::vector<LogRecord> from_jsonl(const std::string& text);

private:
    mutable std::mutex mutex_;
    std::vector<LogRecord> records_;
    std::vector<Listener> listeners_;
};

} // namespace twincore
