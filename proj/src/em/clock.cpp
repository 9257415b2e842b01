#include "em/clock.hpp"

#include <chrono>
#include <thread>

#include "em/timeutil.hpp"

namespace em {

int64_t RealClock::now_ms() const { return wall_now_ms(); }

void RealClock::sleep_until_ms(int64_t t) {
    int64_t now = wall_now_ms();
    if (t <= now) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(t - now));
}

std::shared_ptr<Clock> make_clock(bool simulated, int64_t sim_start_ms) {
    if (simulated) return std::make_shared<SimClock>(sim_start_ms);
    return std::make_shared<RealClock>();
}

}  // namespace em
