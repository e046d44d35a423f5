#include "twincore/session_log.hpp"

#include <sstream>

namespace twincore {

nlohmann::ordered_json to_json(const LogRecord& r)
{
    return {
        {"ts", r.ts},
        {"epoch", r.epoch},
        {"core", r.core ? nlohmann::ordered_json(*r.core) : nlohmann::ordered_json(nullptr)},
        {"event", r.event},
        {"detail", r.detail},
    };
}

LogRecord log_record_from_json(const nlohmann::ordered_json& j)
{
    LogRecord r;
    r.ts = j.at("ts").get<std::int64_t>();
    r.epoch = j.at("epoch").get<Epoch>();
    if (!j.at("core").is_null()) {
        r.core = j.at("core").get<int>();
    }
    r.event = j.at("event").get<std::string>();
    r.detail = j.at("detail");
    return r;
}

void SessionLog::append(LogRecord record)
{
    std::vector<Listener> listeners;
    {
        std::lock_guard lock(mutex_);
        records_.push_back(record);
        listeners = listeners_;
    }
    for (const auto& l : listeners) {
        l(record);
    }
}

void SessionLog::add_listener(Listener listener)
{
    std::lock_guard lock(mutex_);
    listeners_.push_back(std::move(listener));
}

std::vector<LogRecord> SessionLog::records() const
{
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t SessionLog::size() const
{
    std::lock_guard lock(mutex_);
    return records_.size();
}

std::string SessionLog::to_jsonl() const
{
    std::lock_guard lock(mutex_);
    std::string out;
    for (const auto& r : records_) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

std::vector<LogRecord> SessionLog::from_jsonl(const std::string& text)
{
    std::vector<LogRecord> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(log_record_from_json(nlohmann::ordered_json::parse(line)));
        }
    }
    return out;
}

} // namespace twincore
