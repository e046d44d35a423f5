#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace twincore {

// Millisecond time source. Fast-clock runs use SimClock so every timestamp
// is a pure function of the scheduled inputs.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ms() const = 0;
};

class SimClock final : public Clock {
public:
    std::int64_t now_ms() const override { return now_.load(std::memory_order_relaxed); }
    void advance(std::int64_t ms) { now_.fetch_add(ms, std::memory_order_relaxed); }
    void set(std::int64_t ms) { now_.store(ms, std::memory_order_relaxed); }

private:
    std::atomic<std::int64_t> now_{0};
};

class SteadyClock final : public Clock {
public:
    SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

    std::int64_t now_ms() const override
    {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - origin_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point origin_;
};

} // namespace twincore
