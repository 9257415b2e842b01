#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "em/classify.hpp"
#include "em/common.hpp"

using namespace em;
namespace stdfs = std::filesystem;

namespace {

struct TempDir {
    stdfs::path path;
    TempDir() {
        path = stdfs::temp_directory_path() / ("emclf-" + random_id("t"));
        stdfs::create_directories(path);
    }
    ~TempDir() { stdfs::remove_all(path); }
};

std::vector<TrainingSample> separable_2d() {
    std::vector<TrainingSample> s;
    for (int i = 0; i < 10; ++i) {
        s.push_back({{1.0f, 0.1f * i}, true});
        s.push_back({{-1.0f, -0.1f * i}, false});
    }
    return s;
}

// two Gaussian blobs with known separation, split train/held-out
void make_blobs(Rng& rng, size_t n, std::vector<TrainingSample>& out) {
    for (size_t i = 0; i < n; ++i) {
        bool relevant = i % 2 == 0;
        float cx = relevant ? 2.0f : -2.0f;
        out.push_back({{cx + static_cast<float>(rng.next_gauss()),
                        static_cast<float>(rng.next_gauss())},
                       relevant});
    }
}

EmbeddedPost post_with_vector(std::vector<float> v, const std::string& id = "p") {
    EmbeddedPost e;
    e.post.id = id;
    e.vector = std::move(v);
    return e;
}

}  // namespace

TEST_CASE("training on a linearly separable toy set reaches accuracy 1.0") {
    auto samples = separable_2d();
    auto rec = train_classifier(samples, TrainConfig{}, "c1", 0);
    int correct = 0;
    for (const auto& s : samples) {
        bool pred = rec.predict_probability(s.vector) >= 0.5;
        if (pred == s.relevant) ++correct;
    }
    CHECK(correct == static_cast<int>(samples.size()));
}

TEST_CASE("training is deterministic: same samples and seed give identical weights") {
    auto samples = separable_2d();
    auto a = train_classifier(samples, TrainConfig{}, "c1", 0);
    auto b = train_classifier(samples, TrainConfig{}, "c2", 0);
    CHECK(a.weights == b.weights);
}

TEST_CASE("blob training generalizes: held-out accuracy at least 0.9") {
    Rng rng(555);
    std::vector<TrainingSample> train, heldout;
    make_blobs(rng, 200, train);
    make_blobs(rng, 200, heldout);
    auto rec = train_classifier(train, TrainConfig{}, "c", 0);
    int correct = 0;
    for (const auto& s : heldout) {
        if ((rec.predict_probability(s.vector) >= 0.5) == s.relevant) ++correct;
    }
    CHECK(static_cast<double>(correct) / heldout.size() >= 0.9);
}

TEST_CASE("single-class sample sets are refused") {
    std::vector<TrainingSample> s;
    for (int i = 0; i < 30; ++i) s.push_back({{1.0f, 2.0f}, true});
    CHECK_THROWS_AS(train_classifier(s, TrainConfig{}, "c", 0), std::invalid_argument);
}

TEST_CASE("undersized sample sets are refused") {
    std::vector<TrainingSample> s = separable_2d();
    s.resize(10);
    CHECK_THROWS_AS(train_classifier(s, TrainConfig{}, "c", 0), std::invalid_argument);
}

TEST_CASE("training mean is the arithmetic mean of all sample vectors") {
    auto samples = separable_2d();
    auto rec = train_classifier(samples, TrainConfig{}, "c", 0);
    double mx = 0, my = 0;
    for (const auto& s : samples) {
        mx += s.vector[0];
        my += s.vector[1];
    }
    CHECK(rec.training_mean[0] == doctest::Approx(mx / samples.size()));
    CHECK(rec.training_mean[1] == doctest::Approx(my / samples.size()));
}

// ---------------------------------------------------------------------------
// EDDM against an independent step-by-step oracle

namespace {

// Oracle reimplementation with naive two-pass statistics; only warning and
// drift indices are compared, which must match exactly.
struct EddmOracle {
    std::vector<double> distances;
    int64_t last_error = -1;
    int64_t errors = 0;
    double p_max = 0, s_max = 0;

    // signal for the sample at `index`; call once per sample in order
    DriftSignal step(int64_t index, bool is_error, const EddmConfig& cfg) {
        if (!is_error) return DriftSignal::kNone;
        ++errors;
        if (last_error >= 0) distances.push_back(static_cast<double>(index - last_error));
        last_error = index;
        double p = 0;
        for (double d : distances) p += d;
        if (!distances.empty()) p /= static_cast<double>(distances.size());
        double var = 0;
        for (double d : distances) var += (d - p) * (d - p);
        double s = distances.empty() ? 0 : std::sqrt(var / static_cast<double>(distances.size()));
        if (p + 2 * s > p_max + 2 * s_max) {
            p_max = p;
            s_max = s;
        }
        if (errors < cfg.warmup_errors) return DriftSignal::kNone;
        double denom = p_max + 2 * s_max;
        if (denom <= 0) return DriftSignal::kNone;
        double ratio = (p + 2 * s) / denom;
        if (ratio < cfg.beta) return DriftSignal::kDrift;
        if (ratio < cfg.alpha) return DriftSignal::kWarning;
        return DriftSignal::kNone;
    }
};

std::vector<bool> error_sequence_regular_then_shrink() {
    std::vector<bool> seq;
    for (int e = 0; e < 40; ++e) {  // spacing 10
        for (int i = 0; i < 9; ++i) seq.push_back(false);
        seq.push_back(true);
    }
    for (int e = 0; e < 60; ++e) {  // spacing 2
        seq.push_back(false);
        seq.push_back(true);
    }
    return seq;
}

}  // namespace

TEST_CASE("eddm: zero errors never signal") {
    EddmState st;
    EddmConfig cfg;
    for (int i = 0; i < 1000; ++i) {
        CHECK(eddm_update(st, false, cfg) == DriftSignal::kNone);
    }
    CHECK(st.error_count == 0);
}

TEST_CASE("eddm: drift fires after error spacing shrinks from 10 to 2") {
    EddmState st;
    EddmConfig cfg;
    auto seq = error_sequence_regular_then_shrink();
    bool drift_seen = false;
    size_t drift_at = 0;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (eddm_update(st, seq[i], cfg) == DriftSignal::kDrift && !drift_seen) {
            drift_seen = true;
            drift_at = i;
        }
    }
    CHECK(drift_seen);
    CHECK(drift_at >= 400);  // only after the shrink begins
}

TEST_CASE("eddm: a steady ratio never warns") {
    // perfectly regular spacing keeps p+2s at its maximum
    EddmState st;
    EddmConfig cfg;
    for (int e = 0; e < 100; ++e) {
        for (int i = 0; i < 4; ++i) CHECK(eddm_update(st, false, cfg) == DriftSignal::kNone);
        CHECK(eddm_update(st, true, cfg) == DriftSignal::kNone);
    }
}

TEST_CASE("eddm matches the independent oracle on 10 scripted sequences exactly") {
    EddmConfig cfg;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed * 7919);
        // scripted sequence: healthy spacing that degrades midway
        std::vector<bool> seq;
        double p_err = 0.05;
        for (int i = 0; i < 4000; ++i) {
            if (i == 2000) p_err = 0.35;
            seq.push_back(rng.next_bool(p_err));
        }

        EddmState st;
        EddmOracle oracle;
        for (size_t i = 0; i < seq.size(); ++i) {
            auto got = eddm_update(st, seq[i], cfg);
            auto expected = oracle.step(static_cast<int64_t>(i), seq[i], cfg);
            REQUIRE(got == expected);
        }
        CHECK(st.error_count == oracle.errors);
    }
}

// ---------------------------------------------------------------------------
// KL kernel and drift monitor

TEST_CASE("kl kernel matches the hand-computed two-bin value") {
    // 0.5*ln(0.5/0.9) + 0.5*ln(0.5/0.1) = ln(25/9)/2
    double v = kl_divergence({0.5, 0.5}, {0.9, 0.1});
    CHECK(std::abs(v - 0.5108256237659905) < 1e-9);
}

TEST_CASE("kl of identical distributions is zero") {
    CHECK(kl_divergence({0.25, 0.25, 0.5}, {0.25, 0.25, 0.5}) == doctest::Approx(0.0));
}

namespace {

std::vector<std::vector<float>> gauss_cloud(Rng& rng, size_t n, float center, float sigma) {
    std::vector<std::vector<float>> out;
    for (size_t i = 0; i < n; ++i) {
        out.push_back({center + sigma * static_cast<float>(rng.next_gauss()),
                       sigma * static_cast<float>(rng.next_gauss())});
    }
    return out;
}

}  // namespace

TEST_CASE("monitor: stream identical to the reference distribution stays calm") {
    Rng rng(808);
    auto ref = gauss_cloud(rng, 1000, 0.0f, 1.0f);
    std::vector<const std::vector<float>*> refs;
    for (const auto& v : ref) refs.push_back(&v);

    KlConfig cfg;
    cfg.memory = 1000;
    DriftMonitor monitor(cfg);
    monitor.set_reference(refs);
    REQUIRE(monitor.has_reference());

    // the same points: histograms coincide, KL collapses to ~0
    for (const auto& v : ref) monitor.ingest(v);
    auto result = monitor.check();
    REQUIRE(result.checked);
    CHECK(result.kl < 0.01);
    CHECK_FALSE(result.drift);

    // a fresh draw from the same distribution stays well under threshold
    DriftMonitor monitor2(cfg);
    monitor2.set_reference(refs);
    auto stream = gauss_cloud(rng, 1000, 0.0f, 1.0f);
    for (const auto& v : stream) monitor2.ingest(v);
    auto r2 = monitor2.check();
    REQUIRE(r2.checked);
    CHECK(r2.kl < 0.05);
    CHECK_FALSE(r2.drift);
}

TEST_CASE("monitor: a five-sigma shift fires drift") {
    Rng rng(809);
    auto ref = gauss_cloud(rng, 2000, 0.0f, 1.0f);
    std::vector<const std::vector<float>*> refs;
    for (const auto& v : ref) refs.push_back(&v);
    DriftMonitor monitor(KlConfig{});
    monitor.set_reference(refs);

    auto stream = gauss_cloud(rng, 1000, 5.0f, 1.0f);
    for (const auto& v : stream) monitor.ingest(v);
    auto result = monitor.check();
    REQUIRE(result.checked);
    CHECK(result.drift);
    CHECK(result.kl > 0.1);
}

TEST_CASE("monitor: no verdict until the stream memory fills") {
    Rng rng(810);
    auto ref = gauss_cloud(rng, 500, 0.0f, 1.0f);
    std::vector<const std::vector<float>*> refs;
    for (const auto& v : ref) refs.push_back(&v);
    DriftMonitor monitor(KlConfig{});
    monitor.set_reference(refs);
    monitor.ingest({0.0f, 0.0f});
    CHECK_FALSE(monitor.check().checked);
}

TEST_CASE("monitor: degenerate zero-variance reference disables itself") {
    std::vector<std::vector<float>> ref(100, std::vector<float>{1.0f, 1.0f});
    std::vector<const std::vector<float>*> refs;
    for (const auto& v : ref) refs.push_back(&v);
    DriftMonitor monitor(KlConfig{});
    monitor.set_reference(refs);
    CHECK(monitor.disabled());
    CHECK_FALSE(monitor.check().checked);
}

// ---------------------------------------------------------------------------
// dynamic ensemble

namespace {

ClassifierRecord fixed_classifier(const std::string& id, std::vector<double> mean, double bias) {
    ClassifierRecord rec;
    rec.id = id;
    rec.training_mean = std::move(mean);
    rec.weights.assign(rec.training_mean.size() + 1, 0.0);
    rec.weights.back() = bias;  // probability is sigmoid(bias), input-independent
    return rec;
}

std::vector<TrainingSample> dummy_samples() {
    std::vector<TrainingSample> s;
    for (int i = 0; i < 12; ++i) {
        s.push_back({{static_cast<float>(i), 0.0f}, i % 2 == 0});
    }
    return s;
}

}  // namespace

TEST_CASE("pool of one: prediction equals that classifier with weight 1") {
    ClassifierPool pool(PoolConfig{});
    pool.add(fixed_classifier("only", {1.0, 0.0}, 40.0), dummy_samples());
    auto pred = classify(post_with_vector({0.0f, 0.0f}), pool, 7);
    REQUIRE(pred.ensemble.size() == 1);
    CHECK(pred.ensemble[0].weight == doctest::Approx(1.0));
    CHECK(pred.score == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pred.relevant);
    CHECK(pred.decided_at_ms == 7);
}

TEST_CASE("inverse-distance weighting: distances [1,3] with probs [1,0] score 0.75") {
    ClassifierPool pool(PoolConfig{});
    pool.add(fixed_classifier("near", {1.0, 0.0}, 40.0), dummy_samples());    // p ~ 1.0
    pool.add(fixed_classifier("far", {-3.0, 0.0}, -40.0), dummy_samples());   // p ~ 0.0
    auto pred = classify(post_with_vector({0.0f, 0.0f}), pool, 0);
    REQUIRE(pred.ensemble.size() == 2);
    CHECK(pred.score == doctest::Approx(0.75).epsilon(1e-8));
    double wsum = 0;
    for (const auto& m : pred.ensemble) wsum += m.weight;
    CHECK(std::abs(wsum - 1.0) <= 1e-9);
}

TEST_CASE("a post at a training mean is dominated by that classifier") {
    ClassifierPool pool(PoolConfig{});
    pool.add(fixed_classifier("exact", {1.0, 1.0}, 40.0), dummy_samples());
    pool.add(fixed_classifier("other", {5.0, 5.0}, -40.0), dummy_samples());
    auto pred = classify(post_with_vector({1.0f, 1.0f}), pool, 0);
    REQUIRE(pred.ensemble.size() == 2);
    CHECK(pred.ensemble[0].classifier_id == "exact");
    CHECK(pred.ensemble[0].weight >= 0.999);
}

TEST_CASE("empty pool refuses to classify") {
    ClassifierPool pool(PoolConfig{});
    CHECK_THROWS_AS(classify(post_with_vector({0.0f}), pool, 0), std::logic_error);
}

TEST_CASE("k-nearest selection matches brute force on 100 random pools") {
    Rng rng(777);
    for (int trial = 0; trial < 100; ++trial) {
        PoolConfig cfg;
        cfg.k_ensemble = static_cast<size_t>(rng.next_int(1, 7));
        cfg.active_cap = 200;
        ClassifierPool pool(cfg);
        int n = static_cast<int>(rng.next_int(1, 40));
        std::vector<std::pair<std::string, std::vector<double>>> means;
        for (int i = 0; i < n; ++i) {
            std::vector<double> mean = {rng.next_double() * 10, rng.next_double() * 10};
            std::string id = "c" + std::to_string(trial) + "_" + std::to_string(i);
            pool.add(fixed_classifier(id, mean, 0.0), dummy_samples());
            means.emplace_back(id, mean);
        }
        std::vector<float> x = {static_cast<float>(rng.next_double() * 10),
                                static_cast<float>(rng.next_double() * 10)};

        // brute force: sort all ids by (distance, id), take k
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& [id, mean] : means) {
            double dx = x[0] - mean[0], dy = x[1] - mean[1];
            ranked.emplace_back(std::sqrt(dx * dx + dy * dy), id);
        }
        std::sort(ranked.begin(), ranked.end());
        size_t k = std::min(cfg.k_ensemble, ranked.size());

        auto pred = classify(post_with_vector(x), pool, 0);
        REQUIRE(pred.ensemble.size() == k);
        for (size_t i = 0; i < k; ++i) {
            CHECK(pred.ensemble[i].classifier_id == ranked[i].second);
        }
        double wsum = 0;
        for (const auto& m : pred.ensemble) wsum += m.weight;
        CHECK(std::abs(wsum - 1.0) <= 1e-9);
    }
}

TEST_CASE("archived classifiers never appear in ensembles") {
    ClassifierPool pool(PoolConfig{});
    pool.add(fixed_classifier("a", {0.0, 0.0}, 1.0), dummy_samples());
    pool.add(fixed_classifier("b", {10.0, 10.0}, 1.0), dummy_samples());
    pool.archive("a");
    auto pred = classify(post_with_vector({0.0f, 0.0f}), pool, 0);
    REQUIRE(pred.ensemble.size() == 1);
    CHECK(pred.ensemble[0].classifier_id == "b");
}

TEST_CASE("active pool is capped with oldest-first eviction") {
    PoolConfig cfg;
    cfg.active_cap = 3;
    ClassifierPool pool(cfg);
    for (int i = 0; i < 5; ++i) {
        auto rec = fixed_classifier("c" + std::to_string(i), {0.0, 0.0}, 0.0);
        rec.created_at_ms = i;
        pool.add(std::move(rec), dummy_samples());
    }
    CHECK(pool.active_count() == 3);
    CHECK(pool.find("c0")->status == "archived");
    CHECK(pool.find("c1")->status == "archived");
    CHECK(pool.find("c4")->status == "active");
}

TEST_CASE("raw-distance weighting flag weights by distance instead") {
    PoolConfig cfg;
    cfg.raw_distance_weighting = true;
    ClassifierPool pool(cfg);
    pool.add(fixed_classifier("near", {1.0, 0.0}, 40.0), dummy_samples());
    pool.add(fixed_classifier("far", {-3.0, 0.0}, -40.0), dummy_samples());
    auto pred = classify(post_with_vector({0.0f, 0.0f}), pool, 0);
    // weights 1/4 and 3/4: the far classifier dominates under this reading
    CHECK(pred.score == doctest::Approx(0.25).epsilon(1e-8));
}

// ---------------------------------------------------------------------------
// pool persistence and the update step

TEST_CASE("pool persists and reloads records, samples, and status") {
    TempDir dir;
    PoolConfig cfg;
    {
        ClassifierPool pool(cfg);
        auto rec = train_classifier(separable_2d(), cfg.train, "c1", 111);
        pool.add(rec, separable_2d());
        pool.archive("none-such");
        pool.save(dir.path);
    }
    auto pool = ClassifierPool::load(dir.path, cfg);
    CHECK(pool.active_count() == 1);
    REQUIRE(pool.find("c1") != nullptr);
    CHECK(pool.find("c1")->created_at_ms == 111);
    REQUIRE(pool.samples_of("c1") != nullptr);
    CHECK(pool.samples_of("c1")->size() == separable_2d().size());
    auto pred = classify(post_with_vector({1.0f, 0.5f}), pool, 0);
    CHECK(pred.relevant);
}

TEST_CASE("update_step bootstraps the first classifier from a trainable batch") {
    ClassifierPool pool(PoolConfig{});
    auto outcome = update_step(separable_2d(), pool, 42);
    CHECK(outcome.created == 1);
    CHECK(pool.active_count() == 1);
    CHECK(pool.monitor().has_reference());
}

TEST_CASE("update_step defers training on an undersized batch") {
    ClassifierPool pool(PoolConfig{});
    std::vector<TrainingSample> tiny = {{{1.0f, 0.0f}, true}, {{-1.0f, 0.0f}, false}};
    auto outcome = update_step(tiny, pool, 0);
    CHECK(outcome.created == 0);
    CHECK(pool.active_count() == 0);
    // EDDM bookkeeping still advanced (no classifiers yet, so only monitor state)
    auto later = update_step(separable_2d(), pool, 1);
    CHECK(later.created == 1);
}

TEST_CASE("update_step archives an EDDM-drifted classifier and retrains a copy") {
    EddmConfig eddm;
    eddm.warmup_errors = 10;
    PoolConfig cfg;
    cfg.eddm = eddm;
    ClassifierPool pool(cfg);
    update_step(separable_2d(), pool, 0);  // bootstrap
    REQUIRE(pool.active_count() == 1);
    std::string first_id = pool.active()[0]->id;

    // healthy phase with sparse label noise: errors are far apart, which
    // builds the between-error distance baseline EDDM compares against
    Rng rng(90210);
    for (int i = 0; i < 40; ++i) {
        auto batch = separable_2d();
        for (auto& s : batch) {
            if (rng.next_bool(0.05)) s.relevant = !s.relevant;
        }
        update_step(batch, pool, 10 + i);
    }
    CHECK(pool.active_count() == 1);

    // flipped labels: constant errors shrink the distance between errors
    auto flipped = separable_2d();
    for (auto& s : flipped) s.relevant = !s.relevant;
    UpdateOutcome outcome;
    for (int i = 0; i < 10 && outcome.archived == 0; ++i) {
        outcome = update_step(flipped, pool, 100 + i);
    }
    CHECK(outcome.archived == 1);
    CHECK(outcome.retrained == 1);
    CHECK(pool.find(first_id)->status == "archived");
    CHECK(pool.active_count() >= 1);

    // the retrained copy fits the new batch
    auto pred_prob = pool.active()[0]->predict_probability({1.0f, 0.0f});
    CHECK((pred_prob >= 0.5) == flipped[0].relevant);
}

TEST_CASE("update_step trains a brand-new classifier on unsupervised drift") {
    KlConfig kl;
    kl.memory = 40;
    PoolConfig cfg;
    cfg.kl = kl;
    ClassifierPool pool(cfg);
    update_step(separable_2d(), pool, 0);  // bootstrap + reference
    REQUIRE(pool.active_count() == 1);

    // stream far from the reference: every vector lands outside the band
    std::vector<TrainingSample> shifted;
    for (int i = 0; i < 20; ++i) {
        shifted.push_back({{50.0f + i * 0.01f, 50.0f}, i % 2 == 0});
    }
    UpdateOutcome outcome;
    for (int i = 0; i < 5 && outcome.created == 0; ++i) {
        outcome = update_step(shifted, pool, 10 + i);
    }
    CHECK(outcome.kl_drift);
    CHECK(outcome.created == 1);
    CHECK(pool.active_count() == 2);
}

TEST_CASE("eddm state round-trips through json") {
    EddmState st;
    EddmConfig cfg;
    Rng rng(3);
    for (int i = 0; i < 500; ++i) eddm_update(st, rng.next_bool(0.1), cfg);
    auto back = EddmState::from_json(st.to_json());
    CHECK(back.samples_seen == st.samples_seen);
    CHECK(back.p_mean == doctest::Approx(st.p_mean));
    CHECK(back.m2 == doctest::Approx(st.m2));
    CHECK(back.p_max == doctest::Approx(st.p_max));
}
