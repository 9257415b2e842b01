#pragma once

#include <atomic>
#include <cstdint>
#include <memory>

namespace em {

// Pipeline time source. Real mode is wall time; simulated mode is
// event time that advances from message timestamps and jumps through
// sleeps instead of waiting.
class Clock {
  public:
    virtual ~Clock() = default;
    virtual int64_t now_ms() const = 0;
    virtual void sleep_until_ms(int64_t t) = 0;
    // watermark from observed message timestamps; no-op for real clocks
    virtual void advance_to_ms(int64_t t) {}
    virtual bool simulated() const = 0;
};

class RealClock final : public Clock {
  public:
    int64_t now_ms() const override;
    void sleep_until_ms(int64_t t) override;
    bool simulated() const override { return false; }
};

class SimClock final : public Clock {
  public:
    explicit SimClock(int64_t start_ms = 0) : now_(start_ms) {}
    int64_t now_ms() const override { return now_.load(); }
    void sleep_until_ms(int64_t t) override { advance_to_ms(t); }
    void advance_to_ms(int64_t t) override {
        int64_t cur = now_.load();
        while (t > cur && !now_.compare_exchange_weak(cur, t)) {
        }
    }
    bool simulated() const override { return true; }

  private:
    std::atomic<int64_t> now_;
};

std::shared_ptr<Clock> make_clock(bool simulated, int64_t sim_start_ms = 0);

}  // namespace em
