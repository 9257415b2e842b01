#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "em/clock.hpp"
#include "em/fsutil.hpp"

namespace em {

// Embedded log-based pub/sub. One append-only log file per topic plus a
// committed-offset sidecar; per-consumer cursors live in cursors.json and
// advance only through acknowledge(). Safe for concurrent publishers and
// consumers across threads of this process and across OS processes that
// open their own MessageBus on the same data_dir (flock-guarded appends).
struct Message {
    std::string id;
    std::string topic;
    int32_t partition = 0;
    int64_t offset = 0;
    int64_t published_at_ms = 0;
    std::string payload;
};

struct BusOptions {
    size_t seen_ids_bound = 10000;
    // cursors.json persists next_offset on every ack; the seen-id window is
    // flushed on this cadence (and on close) to keep acks cheap.
    size_t seen_flush_every = 128;
    bool fsync_publish = false;
};

class MessageBus;

class Subscription {
  public:
    // Returns up to `max` messages from the cursor onward, in offset order,
    // skipping ids already seen. Never advances the cursor.
    std::vector<Message> poll(size_t max);

    // Advances the cursor past `offset` and persists it. Acking below the
    // cursor is a no-op; replays are idempotent.
    void acknowledge(int64_t offset);

    int64_t next_offset() const { return next_offset_; }
    const std::string& consumer_key() const { return consumer_key_; }
    const std::string& topic() const { return topic_; }

    // True when nothing remains except already-seen duplicates.
    bool caught_up();

    void flush_seen();
    ~Subscription();

  private:
    friend class MessageBus;
    Subscription(MessageBus* bus, std::string consumer_key, std::string topic);

    MessageBus* bus_;
    std::string consumer_key_;
    std::string topic_;
    int64_t next_offset_ = 0;
    int64_t byte_pos_ = 0;  // log position of next_offset_, -1 when unknown
    std::deque<std::string> seen_order_;
    std::unordered_set<std::string> seen_;
    std::map<int64_t, std::pair<std::string, int64_t>> polled_;  // offset -> (id, end pos)
    size_t acks_since_flush_ = 0;

    void remember(const std::string& id);
};

class MessageBus {
  public:
    explicit MessageBus(fs::path data_dir, BusOptions opts = {},
                        std::shared_ptr<Clock> clock = nullptr);

    // Appends durably and returns the stored message. Throws on invalid
    // topic or storage failure; a failed publish is never visible to
    // consumers. Supplying `id` makes republish after a crash replay
    // detectable downstream (consumers skip ids they have already seen).
    Message publish(const std::string& topic, const std::string& payload,
                    const std::string& id = "");

    std::shared_ptr<Subscription> subscribe(const std::string& consumer_key,
                                            const std::string& topic);

    // Next offset to be assigned; 0 for unknown topics.
    int64_t topic_end(const std::string& topic);

    std::vector<std::string> list_topics() const;

    // Reads a whole topic without touching any cursor (stats/export path).
    std::vector<Message> read_all(const std::string& topic);

    const fs::path& bus_dir() const { return bus_dir_; }
    const BusOptions& options() const { return opts_; }
    Clock& clock() { return *clock_; }

    static bool valid_topic(const std::string& topic);

  private:
    friend class Subscription;

    struct Committed {
        int64_t next_offset = 0;
        int64_t size = 0;
    };

    fs::path bus_dir_;
    BusOptions opts_;
    std::shared_ptr<Clock> clock_;

    fs::path log_path(const std::string& topic) const { return bus_dir_ / (topic + ".log"); }
    fs::path sidecar_path(const std::string& topic) const { return bus_dir_ / (topic + ".next"); }
    fs::path lock_path(const std::string& topic) const { return bus_dir_ / (topic + ".lock"); }
    fs::path cursors_path() const { return bus_dir_ / "cursors.json"; }
    fs::path cursors_lock_path() const { return bus_dir_ / "cursors.lock"; }
    fs::path seen_path(const std::string& consumer_key, const std::string& topic) const;

    Committed committed(const std::string& topic);
    Committed committed_or_rebuild(const std::string& topic);
    Committed rebuild_sidecar(const std::string& topic);
    int64_t byte_pos_of(const std::string& topic, int64_t offset, int64_t committed_size);

    void persist_cursor(const std::string& consumer_key, const std::string& topic,
                        int64_t next_offset);
    std::optional<int64_t> load_cursor(const std::string& consumer_key, const std::string& topic);

    void persist_seen(const Subscription& sub);
    void load_seen(Subscription& sub);

    // Reads committed records from `from_offset` at byte position `pos`
    // (scans from the start when pos < 0).
    std::vector<Message> read_from(const std::string& topic, int64_t from_offset, int64_t pos,
                                   int64_t committed_size, size_t max_records,
                                   std::vector<int64_t>* end_positions);
};

}  // namespace em
