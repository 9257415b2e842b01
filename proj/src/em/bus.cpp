#include "em/bus.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "em/common.hpp"
#include "em/logging.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

namespace {

constexpr int64_t kMaxRecordLen = 64 * 1024 * 1024;

void put_be32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

uint32_t get_be32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

Message envelope_to_message(const json& j) {
    Message m;
    m.id = j.at("id").get<std::string>();
    m.topic = j.at("topic").get<std::string>();
    m.partition = j.at("partition").get<int32_t>();
    m.offset = j.at("offset").get<int64_t>();
    m.published_at_ms = j.at("published_at").get<int64_t>();
    m.payload = base64_decode(j.at("payload_b64").get<std::string>());
    return m;
}

}  // namespace

bool MessageBus::valid_topic(const std::string& topic) {
    if (topic.empty()) return false;
    for (char c : topic) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.' ||
                  c == '-';
        if (!ok) return false;
    }
    return true;
}

MessageBus::MessageBus(fs::path data_dir, BusOptions opts, std::shared_ptr<Clock> clock)
    : bus_dir_(std::move(data_dir)), opts_(opts), clock_(std::move(clock)) {
    bus_dir_ /= "bus";
    ensure_dir(bus_dir_);
    if (!clock_) clock_ = std::make_shared<RealClock>();
}

fs::path MessageBus::seen_path(const std::string& consumer_key, const std::string& topic) const {
    return bus_dir_ / "seen" / (to_hex(fnv1a64(consumer_key + "|" + topic)) + ".json");
}

MessageBus::Committed MessageBus::committed(const std::string& topic) {
    auto content = read_file(sidecar_path(topic));
    if (!content) return Committed{};
    try {
        json j = json::parse(*content);
        return Committed{j.at("next_offset").get<int64_t>(), j.at("size").get<int64_t>()};
    } catch (const std::exception&) {
        return rebuild_sidecar(topic);
    }
}

MessageBus::Committed MessageBus::committed_or_rebuild(const std::string& topic) {
    auto content = read_file(sidecar_path(topic));
    if (!content) {
        std::error_code ec;
        if (fs::exists(log_path(topic), ec)) return rebuild_sidecar(topic);
        return Committed{};
    }
    try {
        json j = json::parse(*content);
        return Committed{j.at("next_offset").get<int64_t>(), j.at("size").get<int64_t>()};
    } catch (const std::exception&) {
        return rebuild_sidecar(topic);
    }
}

// Walks the length-prefixed log and recomputes (next_offset, committed size).
// Offsets are dense from 0, so the record count is the next offset.
MessageBus::Committed MessageBus::rebuild_sidecar(const std::string& topic) {
    Committed c;
    std::ifstream in(log_path(topic), std::ios::binary);
    if (!in) return c;
    while (true) {
        unsigned char hdr[4];
        in.read(reinterpret_cast<char*>(hdr), 4);
        if (in.gcount() != 4) break;
        int64_t len = get_be32(hdr);
        if (len <= 0 || len > kMaxRecordLen) break;
        in.seekg(len, std::ios::cur);
        if (!in) break;
        // confirm the body is fully present
        if (static_cast<int64_t>(in.tellg()) != c.size + 4 + len) break;
        c.size += 4 + len;
        c.next_offset += 1;
    }
    atomic_write(sidecar_path(topic),
                 json{{"next_offset", c.next_offset}, {"size", c.size}}.dump());
    return c;
}

Message MessageBus::publish(const std::string& topic, const std::string& payload,
                            const std::string& id) {
    if (!valid_topic(topic)) {
        throw std::invalid_argument("invalid topic name: '" + topic + "'");
    }
    FileLock lock(lock_path(topic), /*exclusive=*/true);
    Committed c = committed_or_rebuild(topic);

    fs::path log = log_path(topic);
    std::error_code ec;
    int64_t actual = fs::exists(log, ec) ? static_cast<int64_t>(fs::file_size(log, ec)) : 0;
    if (actual > c.size) {
        // uncommitted tail from a publisher that died mid-append
        fs::resize_file(log, static_cast<uintmax_t>(c.size), ec);
        if (ec) throw std::runtime_error("log repair failed for " + log.string());
    } else if (actual < c.size) {
        c = rebuild_sidecar(topic);
    }

    Message m;
    m.id = id.empty() ? random_id("m") : id;
    m.topic = topic;
    m.partition = 0;
    m.offset = c.next_offset;
    m.published_at_ms = clock_->now_ms();
    m.payload = payload;

    json envelope{{"id", m.id},
                  {"topic", m.topic},
                  {"partition", m.partition},
                  {"offset", m.offset},
                  {"published_at", m.published_at_ms},
                  {"payload_b64", base64_encode(payload)}};
    std::string body = envelope.dump();
    std::string record;
    record.reserve(body.size() + 4);
    put_be32(record, static_cast<uint32_t>(body.size()));
    record += body;

    {
        int fd = ::open(log.c_str(), O_CREAT | O_WRONLY | O_APPEND | O_CLOEXEC, 0644);
        if (fd < 0) throw std::runtime_error("cannot open log " + log.string());
        size_t written = 0;
        while (written < record.size()) {
            ssize_t n = ::write(fd, record.data() + written, record.size() - written);
            if (n < 0) {
                if (errno == EINTR) continue;
                int e = errno;
                ::close(fd);
                throw std::runtime_error("log append failed: " + std::string(std::strerror(e)));
            }
            written += static_cast<size_t>(n);
        }
        if (opts_.fsync_publish) ::fsync(fd);
        ::close(fd);
    }

    // commit point: the sidecar rename makes the record visible
    atomic_write(sidecar_path(topic), json{{"next_offset", c.next_offset + 1},
                                           {"size", c.size + static_cast<int64_t>(record.size())}}
                                          .dump());
    return m;
}

int64_t MessageBus::topic_end(const std::string& topic) {
    if (!valid_topic(topic)) return 0;
    return committed_or_rebuild(topic).next_offset;
}

std::vector<std::string> MessageBus::list_topics() const {
    std::vector<std::string> names;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(bus_dir_, ec)) {
        if (e.path().extension() == ".log") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

// Byte position of `offset` in the log, or -1 when the committed log is
// shorter. Offsets are dense, so skipping length prefixes suffices.
int64_t MessageBus::byte_pos_of(const std::string& topic, int64_t offset,
                                int64_t committed_size) {
    std::ifstream in(log_path(topic), std::ios::binary);
    if (!in) return offset == 0 ? 0 : -1;
    int64_t pos = 0;
    while (offset > 0) {
        if (pos + 4 > committed_size) return -1;
        in.seekg(pos);
        unsigned char hdr[4];
        in.read(reinterpret_cast<char*>(hdr), 4);
        if (in.gcount() != 4) return -1;
        pos += 4 + get_be32(hdr);
        --offset;
    }
    return pos <= committed_size ? pos : -1;
}

std::vector<Message> MessageBus::read_from(const std::string& topic, int64_t from_offset,
                                           int64_t pos, int64_t committed_size, size_t max_records,
                                           std::vector<int64_t>* end_positions) {
    std::vector<Message> out;
    std::ifstream in(log_path(topic), std::ios::binary);
    if (!in) return out;

    int64_t offset = from_offset;
    if (pos < 0) {
        pos = byte_pos_of(topic, from_offset, committed_size);
        if (pos < 0) return out;
    }

    in.seekg(pos);
    while (out.size() < max_records && pos + 4 <= committed_size) {
        unsigned char hdr[4];
        in.read(reinterpret_cast<char*>(hdr), 4);
        if (in.gcount() != 4) break;
        int64_t len = get_be32(hdr);
        if (len <= 0 || len > kMaxRecordLen || pos + 4 + len > committed_size) break;
        std::string body(static_cast<size_t>(len), '\0');
        in.read(body.data(), len);
        if (in.gcount() != len) break;
        pos += 4 + len;
        try {
            Message m = envelope_to_message(json::parse(body));
            m.offset = offset;  // trust the dense log position
            out.push_back(std::move(m));
            if (end_positions) end_positions->push_back(pos);
        } catch (const std::exception& e) {
            EM_LOG_WARN("bus", "corrupt record in " + topic + " at offset " +
                                   std::to_string(offset) + ": " + e.what());
            break;
        }
        ++offset;
    }
    return out;
}

std::vector<Message> MessageBus::read_all(const std::string& topic) {
    Committed c = committed_or_rebuild(topic);
    return read_from(topic, 0, 0, c.size, static_cast<size_t>(-1), nullptr);
}

void MessageBus::persist_cursor(const std::string& consumer_key, const std::string& topic,
                                int64_t next_offset) {
    FileLock lock(cursors_lock_path(), /*exclusive=*/true);
    json all = json::object();
    if (auto content = read_file(cursors_path())) {
        try {
            all = json::parse(*content);
        } catch (const std::exception&) {
            all = json::object();
        }
    }
    all[consumer_key + "|" + topic] = json{{"consumer_key", consumer_key},
                                           {"topic", topic},
                                           {"partition", 0},
                                           {"next_offset", next_offset}};
    atomic_write(cursors_path(), all.dump());
}

std::optional<int64_t> MessageBus::load_cursor(const std::string& consumer_key,
                                               const std::string& topic) {
    auto content = read_file(cursors_path());
    if (!content) return std::nullopt;
    try {
        json all = json::parse(*content);
        auto it = all.find(consumer_key + "|" + topic);
        if (it == all.end()) return std::nullopt;
        return it->at("next_offset").get<int64_t>();
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void MessageBus::persist_seen(const Subscription& sub) {
    json j{{"consumer_key", sub.consumer_key_},
           {"topic", sub.topic_},
           {"ids", json::array()}};
    for (const auto& id : sub.seen_order_) j["ids"].push_back(id);
    atomic_write(seen_path(sub.consumer_key_, sub.topic_), j.dump());
}

void MessageBus::load_seen(Subscription& sub) {
    auto content = read_file(seen_path(sub.consumer_key_, sub.topic_));
    if (!content) return;
    try {
        json j = json::parse(*content);
        for (const auto& id : j.at("ids")) sub.remember(id.get<std::string>());
    } catch (const std::exception&) {
    }
}

std::shared_ptr<Subscription> MessageBus::subscribe(const std::string& consumer_key,
                                                    const std::string& topic) {
    if (!valid_topic(topic)) throw std::invalid_argument("invalid topic name: '" + topic + "'");
    if (consumer_key.empty()) throw std::invalid_argument("consumer key must be non-empty");
    auto sub = std::shared_ptr<Subscription>(new Subscription(this, consumer_key, topic));
    if (auto persisted = load_cursor(consumer_key, topic)) {
        sub->next_offset_ = *persisted;
        sub->byte_pos_ = -1;
    }
    load_seen(*sub);
    return sub;
}

Subscription::Subscription(MessageBus* bus, std::string consumer_key, std::string topic)
    : bus_(bus), consumer_key_(std::move(consumer_key)), topic_(std::move(topic)) {}

Subscription::~Subscription() {
    try {
        flush_seen();
    } catch (const std::exception&) {
    }
}

void Subscription::flush_seen() {
    if (acks_since_flush_ > 0) {
        bus_->persist_seen(*this);
        acks_since_flush_ = 0;
    }
}

void Subscription::remember(const std::string& id) {
    if (seen_.insert(id).second) {
        seen_order_.push_back(id);
        while (seen_order_.size() > bus_->opts_.seen_ids_bound) {
            seen_.erase(seen_order_.front());
            seen_order_.pop_front();
        }
    }
}

std::vector<Message> Subscription::poll(size_t max) {
    std::vector<Message> out;
    if (max == 0) return out;
    auto c = bus_->committed(topic_);
    if (next_offset_ >= c.next_offset) return out;

    if (byte_pos_ < 0) {
        byte_pos_ = bus_->byte_pos_of(topic_, next_offset_, c.size);
        if (byte_pos_ < 0) return out;
    }

    int64_t offset = next_offset_;
    int64_t pos = byte_pos_;
    while (out.size() < max && offset < c.next_offset) {
        std::vector<int64_t> ends;
        size_t want = max - out.size() + 8;
        auto batch = bus_->read_from(topic_, offset, pos, c.size, want, &ends);
        if (batch.empty()) break;
        for (size_t i = 0; i < batch.size() && out.size() < max; ++i) {
            polled_[batch[i].offset] = {batch[i].id, ends[i]};
            if (!seen_.count(batch[i].id)) out.push_back(batch[i]);
            offset = batch[i].offset + 1;
            pos = ends[i];
        }
    }
    // cap bookkeeping so long-lived subscriptions don't grow unbounded
    while (polled_.size() > 8192) polled_.erase(polled_.begin());
    return out;
}

bool Subscription::caught_up() {
    auto c = bus_->committed(topic_);
    if (next_offset_ >= c.next_offset) return true;
    // records remain, but they may all be known duplicates
    return poll(1).empty();
}

void Subscription::acknowledge(int64_t offset) {
    if (offset + 1 <= next_offset_) return;  // idempotent replay
    int64_t end = bus_->topic_end(topic_);
    if (offset >= end) {
        throw std::out_of_range("acknowledge(" + std::to_string(offset) + ") beyond end " +
                                std::to_string(end) + " of topic " + topic_);
    }
    // remember ids of everything the cursor now passes
    bool pos_known = false;
    for (auto it = polled_.begin(); it != polled_.end() && it->first <= offset;) {
        remember(it->second.first);
        if (it->first == offset) {
            byte_pos_ = it->second.second;
            pos_known = true;
        }
        it = polled_.erase(it);
    }
    if (!pos_known) byte_pos_ = -1;  // acked past unpolled records; rescan later
    next_offset_ = offset + 1;
    bus_->persist_cursor(consumer_key_, topic_, next_offset_);
    if (++acks_since_flush_ >= bus_->opts_.seen_flush_every) flush_seen();
}

}  // namespace em
