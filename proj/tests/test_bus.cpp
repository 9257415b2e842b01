#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <set>
#include <thread>

#include "em/bus.hpp"
#include "em/common.hpp"
#include "em/timeutil.hpp"

using namespace em;
namespace stdfs = std::filesystem;

namespace {

struct TempDir {
    stdfs::path path;
    TempDir() {
        path = stdfs::temp_directory_path() / ("embus-" + random_id("t"));
        stdfs::create_directories(path);
    }
    ~TempDir() { stdfs::remove_all(path); }
};

}  // namespace

TEST_CASE("publish assigns dense offsets starting at zero") {
    TempDir dir;
    MessageBus bus(dir.path);
    auto a = bus.publish("t", "a");
    auto b = bus.publish("t", "b");
    CHECK(a.offset == 0);
    CHECK(b.offset == 1);
    CHECK(a.topic == "t");
    CHECK(a.partition == 0);
}

TEST_CASE("publish rejects invalid topic names") {
    TempDir dir;
    MessageBus bus(dir.path);
    CHECK_THROWS_AS(bus.publish("", "x"), std::invalid_argument);
    CHECK_THROWS_AS(bus.publish("Bad Topic", "x"), std::invalid_argument);
    CHECK_THROWS_AS(bus.publish("ok/nope", "x"), std::invalid_argument);
    CHECK_NOTHROW(bus.publish("ok_topic.v2-x", "x"));
}

TEST_CASE("1000 publishes: dense offsets, distinct ids") {
    TempDir dir;
    MessageBus bus(dir.path);
    std::set<std::string> ids;
    for (int i = 0; i < 1000; ++i) {
        auto m = bus.publish("t", "p" + std::to_string(i));
        CHECK(m.offset == i);
        ids.insert(m.id);
    }
    CHECK(ids.size() == 1000);
    CHECK(bus.topic_end("t") == 1000);

    // exhaustive read-back oracle
    auto all = bus.read_all("t");
    REQUIRE(all.size() == 1000);
    for (int i = 0; i < 1000; ++i) {
        CHECK(all[i].offset == i);
        CHECK(all[i].payload == "p" + std::to_string(i));
    }
}

TEST_CASE("payloads are opaque bytes") {
    TempDir dir;
    MessageBus bus(dir.path);
    std::string blob;
    for (int i = 0; i < 256; ++i) blob.push_back(static_cast<char>(i));
    bus.publish("bin", blob);
    auto all = bus.read_all("bin");
    REQUIRE(all.size() == 1);
    CHECK(all[0].payload == blob);
}

TEST_CASE("topic_end of unknown topic is zero") {
    TempDir dir;
    MessageBus bus(dir.path);
    CHECK(bus.topic_end("nothing") == 0);
}

TEST_CASE("fresh consumer starts at offset zero") {
    TempDir dir;
    MessageBus bus(dir.path);
    bus.publish("t", "a");
    bus.publish("t", "b");
    bus.publish("t", "c");
    auto sub = bus.subscribe("fresh", "t");
    auto got = sub->poll(1);
    REQUIRE(got.size() == 1);
    CHECK(got[0].offset == 0);
}

TEST_CASE("subscribe twice with same key resumes at same cursor") {
    TempDir dir;
    MessageBus bus(dir.path);
    for (int i = 0; i < 3; ++i) bus.publish("t", std::to_string(i));
    auto s1 = bus.subscribe("k", "t");
    auto msgs = s1->poll(10);
    s1->acknowledge(msgs[1].offset);
    auto s2 = bus.subscribe("k", "t");
    CHECK(s2->next_offset() == s1->next_offset());
    CHECK(s2->next_offset() == 2);
}

TEST_CASE("persisted cursor resumes mid-topic") {
    TempDir dir;
    {
        MessageBus bus(dir.path);
        for (int i = 0; i < 3; ++i) bus.publish("t", "m" + std::to_string(i));
        auto sub = bus.subscribe("k", "t");
        auto got = sub->poll(2);
        sub->acknowledge(got[1].offset);  // cursor now 2
    }
    MessageBus bus2(dir.path);
    auto sub = bus2.subscribe("k", "t");
    auto got = sub->poll(10);
    REQUIRE(got.size() == 1);
    CHECK(got[0].offset == 2);
    CHECK(got[0].payload == "m2");
}

TEST_CASE("poll does not advance the cursor") {
    TempDir dir;
    MessageBus bus(dir.path);
    bus.publish("t", "a");
    auto sub = bus.subscribe("k", "t");
    auto first = sub->poll(5);
    auto second = sub->poll(5);
    REQUIRE(first.size() == 1);
    REQUIRE(second.size() == 1);
    CHECK(first[0].offset == second[0].offset);
    CHECK(sub->next_offset() == 0);
}

TEST_CASE("acknowledge is monotone: ack(1) then ack(0) keeps cursor at 2") {
    TempDir dir;
    MessageBus bus(dir.path);
    for (int i = 0; i < 2; ++i) bus.publish("t", std::to_string(i));
    auto sub = bus.subscribe("k", "t");
    sub->poll(10);
    sub->acknowledge(1);
    sub->acknowledge(0);
    CHECK(sub->next_offset() == 2);
}

TEST_CASE("acknowledge past topic end throws") {
    TempDir dir;
    MessageBus bus(dir.path);
    bus.publish("t", "a");
    auto sub = bus.subscribe("k", "t");
    CHECK_THROWS_AS(sub->acknowledge(5), std::out_of_range);
}

TEST_CASE("exactly-once read across simulated crash") {
    TempDir dir;
    {
        MessageBus bus(dir.path);
        for (int i = 0; i < 3; ++i) bus.publish("t", "m" + std::to_string(i));
        auto sub = bus.subscribe("worker", "t");
        auto got = sub->poll(2);
        REQUIRE(got.size() == 2);
        sub->acknowledge(got[0].offset);
        sub->acknowledge(got[1].offset);
        // crash: bus dropped without further acks
    }
    MessageBus bus2(dir.path);
    auto sub = bus2.subscribe("worker", "t");
    auto got = sub->poll(10);
    REQUIRE(got.size() == 1);
    CHECK(got[0].payload == "m2");
}

TEST_CASE("fan-out: distinct consumer keys each see the full ordered sequence") {
    TempDir dir;
    MessageBus bus(dir.path);
    for (int i = 0; i < 3; ++i) bus.publish("t", "m" + std::to_string(i));

    for (const char* key : {"a", "b", "c"}) {
        auto sub = bus.subscribe(key, "t");
        auto got = sub->poll(10);
        REQUIRE(got.size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(got[i].offset == i);
            CHECK(got[i].payload == "m" + std::to_string(i));
        }
    }
}

TEST_CASE("duplicate ids are skipped after acknowledgement") {
    TempDir dir;
    MessageBus bus(dir.path);
    bus.publish("t", "original", "fixed-id");
    auto sub = bus.subscribe("k", "t");
    auto got = sub->poll(10);
    REQUIRE(got.size() == 1);
    sub->acknowledge(got[0].offset);

    // a crash replay republishes the same logical message
    bus.publish("t", "original", "fixed-id");
    auto again = sub->poll(10);
    CHECK(again.empty());
    CHECK(sub->caught_up());

    // a genuinely new message still arrives
    bus.publish("t", "new", "other-id");
    auto more = sub->poll(10);
    REQUIRE(more.size() == 1);
    CHECK(more[0].payload == "new");
}

TEST_CASE("seen-id window survives reopen") {
    TempDir dir;
    {
        MessageBus bus(dir.path);
        bus.publish("t", "x", "dup-1");
        auto sub = bus.subscribe("k", "t");
        auto got = sub->poll(1);
        sub->acknowledge(got[0].offset);
        sub->flush_seen();
    }
    MessageBus bus2(dir.path);
    bus2.publish("t", "x", "dup-1");
    auto sub = bus2.subscribe("k", "t");
    CHECK(sub->poll(5).empty());
}

TEST_CASE("durability: no published message lost after reopen") {
    TempDir dir;
    {
        MessageBus bus(dir.path);
        for (int i = 0; i < 50; ++i) bus.publish("t", "p" + std::to_string(i));
    }
    MessageBus bus2(dir.path);
    CHECK(bus2.topic_end("t") == 50);
    CHECK(bus2.read_all("t").size() == 50);
}

TEST_CASE("uncommitted tail from a torn append is repaired") {
    TempDir dir;
    MessageBus bus(dir.path);
    bus.publish("t", "good");
    // simulate a publisher killed mid-write: garbage beyond the committed size
    {
        std::ofstream raw(dir.path / "bus" / "t.log", std::ios::binary | std::ios::app);
        raw.write("\x00\x00\x00\x10partial", 11);
    }
    auto msgs = bus.read_all("t");
    REQUIRE(msgs.size() == 1);
    auto m = bus.publish("t", "next");
    CHECK(m.offset == 1);
    auto all = bus.read_all("t");
    REQUIRE(all.size() == 2);
    CHECK(all[1].payload == "next");
}

TEST_CASE("concurrent publishers from multiple threads keep offsets dense") {
    TempDir dir;
    constexpr int kThreads = 4;
    constexpr int kPerThread = 100;
    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (int t = 0; t < kThreads; ++t) {
        threads.emplace_back([&, t] {
            MessageBus bus(dir.path);
            for (int i = 0; i < kPerThread; ++i) {
                try {
                    bus.publish("t", std::to_string(t) + ":" + std::to_string(i));
                } catch (const std::exception&) {
                    failures.fetch_add(1);
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(failures.load() == 0);

    MessageBus bus(dir.path);
    CHECK(bus.topic_end("t") == kThreads * kPerThread);
    auto all = bus.read_all("t");
    REQUIRE(all.size() == kThreads * kPerThread);
    std::set<std::string> payloads;
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].offset == static_cast<int64_t>(i));
        payloads.insert(all[i].payload);
    }
    CHECK(payloads.size() == kThreads * kPerThread);
}

TEST_CASE("concurrent consumers with distinct keys each receive all messages") {
    TempDir dir;
    MessageBus bus(dir.path);
    for (int i = 0; i < 3; ++i) bus.publish("t", "m" + std::to_string(i));

    std::vector<std::thread> threads;
    std::atomic<int> total{0};
    for (int t = 0; t < 3; ++t) {
        threads.emplace_back([&, t] {
            MessageBus local(dir.path);
            auto sub = local.subscribe("c" + std::to_string(t), "t");
            int count = 0;
            while (count < 3) {
                auto got = sub->poll(2);
                for (auto& m : got) {
                    sub->acknowledge(m.offset);
                    ++count;
                }
            }
            total.fetch_add(count);
        });
    }
    for (auto& th : threads) th.join();
    CHECK(total.load() == 9);
}

TEST_CASE("simulated clock stamps publish time") {
    TempDir dir;
    auto clock = std::make_shared<SimClock>(1234567);
    MessageBus bus(dir.path, BusOptions{}, clock);
    auto m = bus.publish("t", "x");
    CHECK(m.published_at_ms == 1234567);
}
