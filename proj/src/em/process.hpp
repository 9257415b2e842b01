#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "em/bus.hpp"
#include "em/clock.hpp"

namespace em {

// One stage of the pipeline: consumes its import key, publishes to its
// export key, with optional auxiliary topics declared through params.
struct ProcessSpec {
    std::string name;
    std::string type;
    std::string import_key;  // empty for source processes
    std::string export_key;  // empty for sinks
    double periodic_interval_s = 0;
    int max_successive_failures = 3;
    double heartbeat_timeout_s = 60;
    nlohmann::json params = nlohmann::json::object();
};

enum class ProcessState { kRunning, kRestarting, kFailed, kStopped };

struct ProcessStatus {
    std::string name;
    ProcessState state = ProcessState::kStopped;
    int64_t pid_or_handle = 0;
    int64_t last_heartbeat_ms = 0;
    int successive_failures = 0;
    int total_restarts = 0;
    bool done = false;
};

struct Emission {
    std::string payload;
    std::string topic;  // empty = the process's export key
    std::string id;     // empty = derived from the input message (replay-stable)
};

class HandlerContext {
  public:
    HandlerContext(const ProcessSpec& spec, fs::path data_dir, MessageBus* bus,
                   std::shared_ptr<Clock> clock, nlohmann::json global)
        : spec_(spec), data_dir_(std::move(data_dir)), bus_(bus), clock_(std::move(clock)),
          global_(std::move(global)) {}

    const ProcessSpec& spec() const { return spec_; }
    const fs::path& data_dir() const { return data_dir_; }
    Clock& clock() { return *clock_; }
    std::shared_ptr<Clock> clock_ptr() { return clock_; }
    const nlohmann::json& global() const { return global_; }
    MessageBus& bus() { return *bus_; }

    // Read-only side consumption beyond the import key. The cursor is keyed
    // per process, so restarts resume where they left off.
    std::shared_ptr<Subscription> aux_subscribe(const std::string& topic) {
        auto sub = bus_->subscribe(spec_.name + "#aux." + topic, topic);
        aux_subs_.push_back(sub);
        return sub;
    }
    const std::vector<std::shared_ptr<Subscription>>& aux_subs() const { return aux_subs_; }

  private:
    const ProcessSpec& spec_;
    fs::path data_dir_;
    MessageBus* bus_;
    std::shared_ptr<Clock> clock_;
    nlohmann::json global_;
    std::vector<std::shared_ptr<Subscription>> aux_subs_;
};

// Thrown by a handler to abort the whole process (as opposed to an ordinary
// exception, which only fails the current message and triggers retries).
struct ProcessAbort : std::runtime_error {
    explicit ProcessAbort(const std::string& what) : std::runtime_error(what) {}
};

class Handler {
  public:
    virtual ~Handler() = default;
    virtual void init(HandlerContext& ctx) {}
    virtual std::vector<Emission> process(const Message& msg) = 0;
    virtual std::vector<Emission> periodic(int64_t now_ms) { return {}; }
    virtual void shutdown() {}
    // Sources flip this once their input is exhausted; it feeds idle detection.
    virtual bool source_exhausted() const { return false; }
    // False while the handler still holds deferred work (e.g. a replay queue).
    virtual bool quiescent() { return true; }
};

using HandlerFactory = std::function<std::unique_ptr<Handler>(const ProcessSpec&)>;

// Static description of a handler type, used by config validation.
struct HandlerTypeInfo {
    bool needs_import = true;
    std::function<std::vector<std::string>(const ProcessSpec&)> aux_consumes;
    std::function<std::vector<std::string>(const ProcessSpec&)> aux_produces;
};

struct RunPrimitiveOptions {
    std::function<bool()> stop_requested;
    size_t poll_batch = 32;
    int dead_letter_attempts = 6;  // initial attempt + 5 retries
    double retry_backoff_s = 0.02;
    double idle_sleep_s = 0.005;
};

// The process primitive loop: poll -> process -> publish -> acknowledge,
// with heartbeats, periodic hook, retry and dead-letter handling. Returns
// when the stop predicate fires; throws ProcessAbort through.
void run_primitive(const ProcessSpec& spec, Handler& handler, MessageBus& bus,
                   const fs::path& data_dir, std::shared_ptr<Clock> clock,
                   const RunPrimitiveOptions& options);

std::string dead_letter_topic(const ProcessSpec& spec);

// Heartbeat file contents, shared between the loop and the supervisor.
struct Heartbeat {
    std::string name;
    int64_t wall_ms = 0;
    bool caught_up = false;
    bool done = false;
    int64_t processed = 0;
};

fs::path heartbeat_path(const fs::path& data_dir, const std::string& name);
void write_heartbeat(const fs::path& data_dir, const Heartbeat& hb);
std::optional<Heartbeat> read_heartbeat(const fs::path& data_dir, const std::string& name);

struct SupervisorOptions {
    bool subprocess_mode = false;
    double check_interval_s = 0.25;
    // window that defines "successive": failures separated by a healthy
    // stretch at least this long do not accumulate
    double healthy_reset_s = 300;
    bool stop_when_idle = true;
    int idle_confirmations = 3;
    double max_runtime_s = 0;  // 0 = unlimited
    bool simulated_clock = false;
    int64_t sim_start_ms = 0;
};

// Runs every spec under supervision: restarts dead or hung processes,
// kills zombies (subprocess mode), and records an alert once a process
// exceeds its successive-failure budget.
class Supervisor {
  public:
    Supervisor(std::vector<ProcessSpec> specs, fs::path data_dir, HandlerFactory factory,
               nlohmann::json global, SupervisorOptions options);
    ~Supervisor();

    // Blocks until idle (when stop_when_idle), stop request, or deadline.
    // Returns the number of processes in the failed state.
    int run();

    void request_stop();
    std::vector<ProcessStatus> statuses() const;

    // pids of live children (subprocess mode), for fault-injection tests
    std::vector<std::pair<std::string, int64_t>> live_children() const;

  private:
    struct Worker;
    void start_worker(Worker& w);
    void stop_worker(Worker& w, bool kill);
    bool worker_alive(Worker& w);
    void check_workers();
    bool pipeline_idle();
    void persist_status();
    void append_alert(const Worker& w, const std::string& kind, const std::string& msg);

    std::vector<ProcessSpec> specs_;
    fs::path data_dir_;
    HandlerFactory factory_;
    nlohmann::json global_;
    SupervisorOptions opts_;
    std::vector<std::unique_ptr<Worker>> workers_;
    std::atomic<bool> stop_{false};
    int idle_rounds_ = 0;
    std::map<std::string, int64_t> last_topic_ends_;
    mutable std::mutex status_mutex_;
};

}  // namespace em
