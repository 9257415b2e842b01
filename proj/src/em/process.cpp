#include "em/process.hpp"

#include <signal.h>
#include <sys/prctl.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

#include "em/common.hpp"
#include "em/logging.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

std::string dead_letter_topic(const ProcessSpec& spec) {
    return (spec.export_key.empty() ? spec.name : spec.export_key) + ".deadletter";
}

fs::path heartbeat_path(const fs::path& data_dir, const std::string& name) {
    return data_dir / "heartbeats" / name;
}

void write_heartbeat(const fs::path& data_dir, const Heartbeat& hb) {
    json j{{"name", hb.name},
           {"wall_ms", hb.wall_ms},
           {"caught_up", hb.caught_up},
           {"done", hb.done},
           {"processed", hb.processed}};
    atomic_write(heartbeat_path(data_dir, hb.name), j.dump());
}

std::optional<Heartbeat> read_heartbeat(const fs::path& data_dir, const std::string& name) {
    auto content = read_file(heartbeat_path(data_dir, name));
    if (!content) return std::nullopt;
    try {
        json j = json::parse(*content);
        Heartbeat hb;
        hb.name = j.value("name", name);
        hb.wall_ms = j.value("wall_ms", int64_t{0});
        hb.caught_up = j.value("caught_up", false);
        hb.done = j.value("done", false);
        hb.processed = j.value("processed", int64_t{0});
        return hb;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void run_primitive(const ProcessSpec& spec, Handler& handler, MessageBus& bus,
                   const fs::path& data_dir, std::shared_ptr<Clock> clock,
                   const RunPrimitiveOptions& options) {
    HandlerContext ctx(spec, data_dir, &bus, clock, json::object());
    handler.init(ctx);

    std::shared_ptr<Subscription> sub;
    if (!spec.import_key.empty()) sub = bus.subscribe(spec.name, spec.import_key);

    const bool is_source = spec.import_key.empty();
    Heartbeat hb;
    hb.name = spec.name;
    int64_t last_hb_wall = 0;

    auto write_hb = [&](bool force) {
        int64_t wall = wall_now_ms();
        if (!force && wall - last_hb_wall < 200) return;
        last_hb_wall = wall;
        hb.wall_ms = wall;
        bool caught = true;
        if (sub) caught = sub->caught_up();
        for (const auto& aux : ctx.aux_subs()) caught = caught && aux->caught_up();
        caught = caught && handler.quiescent();
        hb.done = handler.source_exhausted();
        hb.caught_up = is_source ? hb.done : caught;
        write_heartbeat(data_dir, hb);
    };

    auto publish_emissions = [&](const std::vector<Emission>& outs, const std::string& input_id) {
        for (size_t k = 0; k < outs.size(); ++k) {
            const Emission& o = outs[k];
            const std::string& topic = o.topic.empty() ? spec.export_key : o.topic;
            if (topic.empty()) {
                throw std::logic_error(spec.name + " emitted output but has no export key");
            }
            std::string id = o.id;
            if (id.empty()) {
                id = input_id.empty() ? random_id(spec.name.c_str())
                                      : spec.name + ":" + input_id + ":" + std::to_string(k);
            }
            bus.publish(topic, o.payload, id);
        }
    };

    auto stopped = [&] { return options.stop_requested && options.stop_requested(); };

    int64_t failing_offset = -1;
    int attempts = 0;
    int64_t last_periodic = clock->now_ms();
    write_hb(true);

    while (!stopped()) {
        bool progressed = false;

        if (sub) {
            auto msgs = sub->poll(options.poll_batch);
            for (const auto& m : msgs) {
                if (stopped()) break;
                clock->advance_to_ms(m.published_at_ms);
                std::vector<Emission> outs;
                bool failed = false;
                try {
                    outs = handler.process(m);
                } catch (const ProcessAbort&) {
                    write_hb(true);
                    throw;
                } catch (const std::exception& e) {
                    failed = true;
                    if (m.offset == failing_offset) {
                        ++attempts;
                    } else {
                        failing_offset = m.offset;
                        attempts = 1;
                    }
                    EM_LOG_WARN(spec.name, "handler error at " + spec.import_key + "[" +
                                               std::to_string(m.offset) + "] attempt " +
                                               std::to_string(attempts) + ": " + e.what());
                    if (attempts >= options.dead_letter_attempts) {
                        bus.publish(dead_letter_topic(spec), m.payload, "dlq:" + m.id);
                        sub->acknowledge(m.offset);
                        EM_LOG_WARN(spec.name, "dead-lettered offset " + std::to_string(m.offset));
                        failing_offset = -1;
                        attempts = 0;
                        progressed = true;
                    } else {
                        std::this_thread::sleep_for(std::chrono::duration<double>(
                            options.retry_backoff_s));
                    }
                }
                if (failed) break;  // re-poll from the cursor; order is preserved

                publish_emissions(outs, m.id);
                sub->acknowledge(m.offset);
                failing_offset = -1;
                attempts = 0;
                hb.processed += 1;
                progressed = true;
                write_hb(false);
            }
        }

        if (spec.periodic_interval_s > 0 && !stopped()) {
            int64_t interval_ms = static_cast<int64_t>(spec.periodic_interval_s * 1000.0);
            if (interval_ms < 1) interval_ms = 1;
            // a source on a simulated clock drives time itself
            if (is_source && clock->simulated() && !handler.source_exhausted()) {
                clock->advance_to_ms(last_periodic + interval_ms);
            }
            int64_t now = clock->now_ms();
            if (now - last_periodic >= interval_ms) {
                last_periodic = now;
                try {
                    auto outs = handler.periodic(now);
                    if (!outs.empty()) {
                        publish_emissions(outs, "");
                        progressed = true;
                    }
                } catch (const ProcessAbort&) {
                    write_hb(true);
                    throw;
                } catch (const std::exception& e) {
                    EM_LOG_WARN(spec.name, std::string("periodic hook failed: ") + e.what());
                }
            }
        }

        write_hb(false);
        if (!progressed) {
            std::this_thread::sleep_for(std::chrono::duration<double>(options.idle_sleep_s));
        }
    }
    write_hb(true);
}

// ---------------------------------------------------------------------------
// Supervisor

struct Supervisor::Worker {
    ProcessSpec spec;
    ProcessStatus status;

    // thread mode
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> thread_stop;
    std::shared_ptr<std::atomic<int>> thread_result;  // 0 running, 1 clean, 2 crashed

    // subprocess mode
    pid_t pid = -1;

    int64_t last_failure_wall = 0;
    int64_t last_restart_wall = 0;
    bool alerted = false;
};

Supervisor::Supervisor(std::vector<ProcessSpec> specs, fs::path data_dir, HandlerFactory factory,
                       nlohmann::json global, SupervisorOptions options)
    : specs_(std::move(specs)), data_dir_(std::move(data_dir)), factory_(std::move(factory)),
      global_(std::move(global)), opts_(options) {
    ensure_dir(data_dir_);
    for (const auto& s : specs_) {
        auto w = std::make_unique<Worker>();
        w->spec = s;
        w->status.name = s.name;
        workers_.push_back(std::move(w));
    }
}

Supervisor::~Supervisor() {
    request_stop();
    for (auto& w : workers_) {
        if (!opts_.subprocess_mode && w->thread.joinable()) stop_worker(*w, false);
        if (opts_.subprocess_mode && w->pid > 0) stop_worker(*w, true);
    }
}

static fs::path stop_file(const fs::path& data_dir) { return data_dir / "control" / "stop"; }

void Supervisor::request_stop() { stop_.store(true); }

void Supervisor::start_worker(Worker& w) {
    w.last_restart_wall = wall_now_ms();
    {
        std::lock_guard<std::mutex> lk(status_mutex_);
        if (w.status.successive_failures < w.spec.max_successive_failures) {
            w.status.state = ProcessState::kRunning;
        }
    }
    if (opts_.subprocess_mode) {
        pid_t parent = ::getpid();
        pid_t pid = ::fork();
        if (pid < 0) throw std::runtime_error("fork failed: " + std::string(std::strerror(errno)));
        if (pid == 0) {
            // child: fresh bus, clock, and handler; exits instead of returning
            ::prctl(PR_SET_PDEATHSIG, SIGKILL);
            int code = 0;
            try {
                set_log_process_name(w.spec.name);
                auto clock = make_clock(opts_.simulated_clock, opts_.sim_start_ms);
                MessageBus bus(data_dir_, BusOptions{}, clock);
                auto handler = factory_(w.spec);
                RunPrimitiveOptions ro;
                fs::path stopf = stop_file(data_dir_);
                ro.stop_requested = [stopf, parent] {
                    return fs::exists(stopf) || ::getppid() != parent;
                };
                run_primitive(w.spec, *handler, bus, data_dir_, clock, ro);
                handler->shutdown();
            } catch (const std::exception& e) {
                EM_LOG_ERROR(w.spec.name, std::string("process crashed: ") + e.what());
                code = 17;
            } catch (...) {
                code = 17;
            }
            ::_exit(code);
        }
        w.pid = pid;
        std::lock_guard<std::mutex> lk(status_mutex_);
        w.status.pid_or_handle = pid;
    } else {
        w.thread_stop = std::make_shared<std::atomic<bool>>(false);
        w.thread_result = std::make_shared<std::atomic<int>>(0);
        auto spec = w.spec;
        auto factory = factory_;
        auto data_dir = data_dir_;
        auto opts = opts_;
        auto stop_flag = w.thread_stop;
        auto result = w.thread_result;
        auto* global_stop = &stop_;
        w.thread = std::thread([spec, factory, data_dir, opts, stop_flag, result, global_stop] {
            try {
                auto clock = make_clock(opts.simulated_clock, opts.sim_start_ms);
                MessageBus bus(data_dir, BusOptions{}, clock);
                auto handler = factory(spec);
                RunPrimitiveOptions ro;
                ro.stop_requested = [stop_flag, global_stop] {
                    return stop_flag->load() || global_stop->load();
                };
                run_primitive(spec, *handler, bus, data_dir, clock, ro);
                handler->shutdown();
                result->store(1);
            } catch (const std::exception& e) {
                EM_LOG_ERROR(spec.name, std::string("process crashed: ") + e.what());
                result->store(2);
            } catch (...) {
                result->store(2);
            }
        });
        std::lock_guard<std::mutex> lk(status_mutex_);
        w.status.pid_or_handle = static_cast<int64_t>(
            std::hash<std::thread::id>{}(w.thread.get_id()) & 0x7fffffff);
    }
}

bool Supervisor::worker_alive(Worker& w) {
    if (opts_.subprocess_mode) {
        if (w.pid <= 0) return false;
        int status = 0;
        pid_t r = ::waitpid(w.pid, &status, WNOHANG);
        if (r == 0) return true;
        w.pid = -1;  // reaped
        return false;
    }
    if (!w.thread.joinable()) return false;
    return w.thread_result->load() == 0;
}

void Supervisor::stop_worker(Worker& w, bool kill) {
    if (opts_.subprocess_mode) {
        if (w.pid > 0) {
            if (kill) ::kill(w.pid, SIGKILL);
            int status = 0;
            ::waitpid(w.pid, &status, 0);
            w.pid = -1;
        }
        return;
    }
    if (!w.thread.joinable()) return;
    if (w.thread_stop) w.thread_stop->store(true);
    // a cooperative thread returns between messages; a truly wedged handler
    // can only be abandoned in thread mode (subprocess mode can SIGKILL)
    for (int i = 0; i < 100 && w.thread_result->load() == 0; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (w.thread_result->load() != 0) {
        w.thread.join();
    } else {
        EM_LOG_WARN(w.spec.name, "thread unresponsive; detaching (use subprocess mode for hard kills)");
        w.thread.detach();
    }
}

void Supervisor::append_alert(const Worker& w, const std::string& kind, const std::string& msg) {
    json j{{"at", format_iso8601(wall_now_ms())},
           {"process", w.spec.name},
           {"kind", kind},
           {"successive_failures", w.status.successive_failures},
           {"message", msg}};
    append_line(data_dir_ / "alerts.jsonl", j.dump());
}

void Supervisor::check_workers() {
    int64_t wall = wall_now_ms();
    for (auto& wp : workers_) {
        Worker& w = *wp;
        bool alive = worker_alive(w);

        // healthy stretch clears the successive-failure counter
        if (alive && w.status.successive_failures > 0 &&
            wall - w.last_failure_wall >= static_cast<int64_t>(opts_.healthy_reset_s * 1000)) {
            std::lock_guard<std::mutex> lk(status_mutex_);
            w.status.successive_failures = 0;
            w.alerted = false;
            if (w.status.state == ProcessState::kFailed) w.status.state = ProcessState::kRunning;
        }

        if (auto hb = read_heartbeat(data_dir_, w.spec.name)) {
            std::lock_guard<std::mutex> lk(status_mutex_);
            w.status.last_heartbeat_ms = hb->wall_ms;
            w.status.done = hb->done;
        }

        if (alive) {
            // zombie check: alive but heartbeat frozen
            int64_t last_sign = std::max(w.status.last_heartbeat_ms, w.last_restart_wall);
            int64_t timeout_ms = static_cast<int64_t>(w.spec.heartbeat_timeout_s * 1000);
            if (wall - last_sign > timeout_ms) {
                EM_LOG_WARN(w.spec.name, "heartbeat stale for " +
                                             std::to_string(wall - last_sign) + "ms; killing");
                stop_worker(w, /*kill=*/true);
                alive = false;
            } else {
                continue;
            }
        }

        stop_worker(w, /*kill=*/false);  // reap the finished thread/zombie

        if (stop_.load()) {
            std::lock_guard<std::mutex> lk(status_mutex_);
            if (w.status.state != ProcessState::kFailed) w.status.state = ProcessState::kStopped;
            continue;
        }
        if (w.status.state == ProcessState::kFailed &&
            w.status.successive_failures > w.spec.max_successive_failures) {
            continue;  // over budget; stays down until a manual restart
        }

        // death or hang: account the failure, then restart within budget
        {
            std::lock_guard<std::mutex> lk(status_mutex_);
            w.status.successive_failures += 1;
            w.last_failure_wall = wall;
            w.status.state = ProcessState::kRestarting;
        }
        if (w.status.successive_failures > w.spec.max_successive_failures) {
            std::lock_guard<std::mutex> lk(status_mutex_);
            w.status.state = ProcessState::kFailed;
            continue;
        }
        bool hit_limit = w.status.successive_failures >= w.spec.max_successive_failures;
        EM_LOG_INFO(w.spec.name,
                    "restarting (successive failure " +
                        std::to_string(w.status.successive_failures) + "/" +
                        std::to_string(w.spec.max_successive_failures) + ")");
        start_worker(w);
        {
            std::lock_guard<std::mutex> lk(status_mutex_);
            w.status.total_restarts += 1;
            if (hit_limit) {
                w.status.state = ProcessState::kFailed;
            }
        }
        if (hit_limit && !w.alerted) {
            w.alerted = true;
            append_alert(w, "restart_limit",
                         "process hit its successive-failure budget and is marked failed");
        }
    }
}

bool Supervisor::pipeline_idle() {
    MessageBus bus(data_dir_);
    for (const auto& wp : workers_) {
        const Worker& w = *wp;
        if (w.status.state == ProcessState::kFailed) continue;  // cannot make progress
        auto hb = read_heartbeat(data_dir_, w.spec.name);
        if (!hb) return false;
        if (w.spec.import_key.empty()) {
            if (!hb->done) return false;
        } else if (!hb->caught_up) {
            return false;
        }
    }
    std::map<std::string, int64_t> ends;
    for (const auto& t : bus.list_topics()) ends[t] = bus.topic_end(t);
    bool stable = (ends == last_topic_ends_);
    last_topic_ends_ = std::move(ends);
    return stable;
}

void Supervisor::persist_status() {
    json arr = json::array();
    std::lock_guard<std::mutex> lk(status_mutex_);
    for (const auto& wp : workers_) {
        const ProcessStatus& s = wp->status;
        static const char* names[] = {"running", "restarting", "failed", "stopped"};
        arr.push_back(json{{"name", s.name},
                           {"state", names[static_cast<int>(s.state)]},
                           {"pid_or_handle", s.pid_or_handle},
                           {"last_heartbeat_ms", s.last_heartbeat_ms},
                           {"successive_failures", s.successive_failures},
                           {"total_restarts", s.total_restarts},
                           {"done", s.done}});
    }
    atomic_write(data_dir_ / "status.json",
                 json{{"updated_at", format_iso8601(wall_now_ms())}, {"processes", arr}}.dump(2));
}

int Supervisor::run() {
    std::error_code ec;
    fs::remove(stop_file(data_dir_), ec);  // stale stop from a prior run
    ensure_dir(data_dir_ / "heartbeats");

    for (auto& w : workers_) start_worker(*w);

    int64_t started = wall_now_ms();
    idle_rounds_ = 0;
    while (!stop_.load()) {
        std::this_thread::sleep_for(std::chrono::duration<double>(opts_.check_interval_s));
        check_workers();
        persist_status();
        if (opts_.max_runtime_s > 0 &&
            wall_now_ms() - started > static_cast<int64_t>(opts_.max_runtime_s * 1000)) {
            EM_LOG_WARN("supervisor", "max runtime exceeded; stopping pipeline");
            request_stop();
            break;
        }
        if (opts_.stop_when_idle) {
            if (pipeline_idle()) {
                if (++idle_rounds_ >= opts_.idle_confirmations) {
                    EM_LOG_INFO("supervisor", "pipeline idle; stopping");
                    request_stop();
                    break;
                }
            } else {
                idle_rounds_ = 0;
            }
        }
    }

    // graceful shutdown: signal, then force
    if (opts_.subprocess_mode) {
        atomic_write(stop_file(data_dir_), "stop");
        int64_t deadline = wall_now_ms() + 5000;
        for (auto& wp : workers_) {
            Worker& w = *wp;
            while (w.pid > 0 && wall_now_ms() < deadline) {
                if (!worker_alive(w)) break;
                std::this_thread::sleep_for(std::chrono::milliseconds(20));
            }
            stop_worker(w, /*kill=*/true);
        }
    } else {
        for (auto& wp : workers_) stop_worker(*wp, /*kill=*/false);
    }

    int failed = 0;
    {
        std::lock_guard<std::mutex> lk(status_mutex_);
        for (auto& wp : workers_) {
            if (wp->status.state == ProcessState::kFailed) {
                ++failed;
            } else {
                wp->status.state = ProcessState::kStopped;
            }
        }
    }
    persist_status();
    return failed;
}

std::vector<ProcessStatus> Supervisor::statuses() const {
    std::lock_guard<std::mutex> lk(status_mutex_);
    std::vector<ProcessStatus> out;
    out.reserve(workers_.size());
    for (const auto& w : workers_) out.push_back(w->status);
    return out;
}

std::vector<std::pair<std::string, int64_t>> Supervisor::live_children() const {
    std::lock_guard<std::mutex> lk(status_mutex_);
    std::vector<std::pair<std::string, int64_t>> out;
    for (const auto& w : workers_) {
        if (w->pid > 0) out.emplace_back(w->spec.name, w->pid);
    }
    return out;
}

}  // namespace em
