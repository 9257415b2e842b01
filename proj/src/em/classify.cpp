#include "em/classify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "em/common.hpp"
#include "em/logging.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

// ---------------------------------------------------------------------------
// EDDM

double EddmState::s_std() const {
    if (distance_count <= 0) return 0;
    return std::sqrt(m2 / static_cast<double>(distance_count));
}

json EddmState::to_json() const {
    return json{{"samples_seen", samples_seen}, {"last_error_index", last_error_index},
                {"error_count", error_count},   {"distance_count", distance_count},
                {"p_mean", p_mean},             {"m2", m2},
                {"p_max", p_max},               {"s_max", s_max}};
}

EddmState EddmState::from_json(const json& j) {
    EddmState s;
    s.samples_seen = j.value("samples_seen", int64_t{0});
    s.last_error_index = j.value("last_error_index", int64_t{-1});
    s.error_count = j.value("error_count", int64_t{0});
    s.distance_count = j.value("distance_count", int64_t{0});
    s.p_mean = j.value("p_mean", 0.0);
    s.m2 = j.value("m2", 0.0);
    s.p_max = j.value("p_max", 0.0);
    s.s_max = j.value("s_max", 0.0);
    return s;
}

DriftSignal eddm_update(EddmState& state, bool is_error, const EddmConfig& cfg) {
    int64_t index = state.samples_seen;
    state.samples_seen += 1;
    if (!is_error) return DriftSignal::kNone;

    state.error_count += 1;
    if (state.last_error_index >= 0) {
        double distance = static_cast<double>(index - state.last_error_index);
        state.distance_count += 1;
        double delta = distance - state.p_mean;
        state.p_mean += delta / static_cast<double>(state.distance_count);
        state.m2 += delta * (distance - state.p_mean);
    }
    state.last_error_index = index;

    double level = state.p_mean + 2.0 * state.s_std();
    if (level > state.p_max + 2.0 * state.s_max) {
        state.p_max = state.p_mean;
        state.s_max = state.s_std();
    }
    if (state.error_count < cfg.warmup_errors) return DriftSignal::kNone;
    double max_level = state.p_max + 2.0 * state.s_max;
    if (max_level <= 0) return DriftSignal::kNone;
    double ratio = level / max_level;
    if (ratio < cfg.beta) return DriftSignal::kDrift;
    if (ratio < cfg.alpha) return DriftSignal::kWarning;
    return DriftSignal::kNone;
}

// ---------------------------------------------------------------------------
// Classifier records and training

static double sigmoid(double z) {
    if (z >= 0) {
        double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

double ClassifierRecord::predict_probability(const std::vector<float>& x) const {
    double z = weights.empty() ? 0.0 : weights.back();  // bias
    size_t d = weights.size() > 0 ? weights.size() - 1 : 0;
    for (size_t i = 0; i < d && i < x.size(); ++i) {
        z += weights[i] * static_cast<double>(x[i]);
    }
    return sigmoid(z);
}

json ClassifierRecord::to_json() const {
    return json{{"id", id},
                {"weights", weights},
                {"training_mean", training_mean},
                {"status", status},
                {"created_at", created_at_ms},
                {"eddm_state", eddm.to_json()},
                {"trained_samples", trained_samples}};
}

ClassifierRecord ClassifierRecord::from_json(const json& j) {
    ClassifierRecord r;
    r.id = j.at("id").get<std::string>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.training_mean = j.at("training_mean").get<std::vector<double>>();
    r.status = j.value("status", "active");
    r.created_at_ms = j.value("created_at", int64_t{0});
    if (j.contains("eddm_state")) r.eddm = EddmState::from_json(j.at("eddm_state"));
    r.trained_samples = j.value("trained_samples", int64_t{0});
    return r;
}

bool batch_trainable(const std::vector<TrainingSample>& batch, const TrainConfig& cfg) {
    if (batch.size() < cfg.min_samples) return false;
    bool pos = false, neg = false;
    for (const auto& s : batch) {
        (s.relevant ? pos : neg) = true;
        if (pos && neg) return true;
    }
    return false;
}

ClassifierRecord train_classifier(const std::vector<TrainingSample>& samples,
                                  const TrainConfig& cfg, const std::string& id, int64_t now_ms,
                                  const std::vector<double>* warm_start) {
    if (samples.empty()) throw std::invalid_argument("no training samples");
    if (samples.size() < cfg.min_samples) {
        throw std::invalid_argument("need at least " + std::to_string(cfg.min_samples) +
                                    " samples, got " + std::to_string(samples.size()));
    }
    size_t d = samples.front().vector.size();
    bool pos = false, neg = false;
    for (const auto& s : samples) {
        if (s.vector.size() != d) throw std::invalid_argument("inconsistent sample dimensions");
        (s.relevant ? pos : neg) = true;
    }
    if (!pos || !neg) {
        throw std::invalid_argument("single-class sample set; training deferred");
    }

    ClassifierRecord rec;
    rec.id = id;
    rec.created_at_ms = now_ms;
    rec.trained_samples = static_cast<int64_t>(samples.size());
    rec.weights.assign(d + 1, 0.0);
    if (warm_start && warm_start->size() == d + 1) rec.weights = *warm_start;

    const double n = static_cast<double>(samples.size());
    std::vector<double> grad(d + 1, 0.0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const auto& s : samples) {
            double z = rec.weights[d];
            for (size_t i = 0; i < d; ++i) z += rec.weights[i] * s.vector[i];
            double err = sigmoid(z) - (s.relevant ? 1.0 : 0.0);
            for (size_t i = 0; i < d; ++i) grad[i] += err * s.vector[i];
            grad[d] += err;
        }
        for (size_t i = 0; i <= d; ++i) {
            rec.weights[i] -= cfg.learning_rate * grad[i] / n;
        }
    }
    for (double w : rec.weights) {
        if (!std::isfinite(w)) throw std::runtime_error("training produced non-finite weights");
    }

    rec.training_mean.assign(d, 0.0);
    for (const auto& s : samples) {
        for (size_t i = 0; i < d; ++i) rec.training_mean[i] += s.vector[i];
    }
    for (double& m : rec.training_mean) m /= n;
    return rec;
}

// ---------------------------------------------------------------------------
// KL drift monitor

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("KL over unequal lengths");
    double kl = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0) continue;
        if (q[i] <= 0) throw std::invalid_argument("KL undefined for zero q mass (smooth first)");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

double DriftMonitor::distance_to_ref(const std::vector<float>& v) const {
    double d2 = 0;
    size_t d = std::min(v.size(), ref_mean_.size());
    for (size_t i = 0; i < d; ++i) {
        double diff = static_cast<double>(v[i]) - ref_mean_[i];
        d2 += diff * diff;
    }
    return std::sqrt(d2);
}

void DriftMonitor::set_reference(const std::vector<const std::vector<float>*>& training_vectors) {
    has_reference_ = false;
    disabled_ = false;
    ref_hist_.clear();
    band_.clear();
    if (training_vectors.empty()) return;

    size_t d = training_vectors.front()->size();
    ref_mean_.assign(d, 0.0);
    for (const auto* v : training_vectors) {
        for (size_t i = 0; i < d && i < v->size(); ++i) ref_mean_[i] += (*v)[i];
    }
    for (double& m : ref_mean_) m /= static_cast<double>(training_vectors.size());

    std::vector<double> distances;
    distances.reserve(training_vectors.size());
    for (const auto* v : training_vectors) distances.push_back(distance_to_ref(*v));
    lo_ = *std::min_element(distances.begin(), distances.end());
    hi_ = *std::max_element(distances.begin(), distances.end());
    if (hi_ - lo_ <= 1e-12) {
        // zero-variance reference cannot produce a meaningful band
        disabled_ = true;
        EM_LOG_WARN("drift_monitor", "degenerate reference distribution; monitor disabled");
        return;
    }

    ref_hist_.assign(static_cast<size_t>(cfg_.bins), 0.0);
    for (double dist : distances) {
        int bin = static_cast<int>((dist - lo_) / (hi_ - lo_) * cfg_.bins);
        if (bin < 0) bin = 0;
        if (bin >= cfg_.bins) bin = cfg_.bins - 1;
        ref_hist_[static_cast<size_t>(bin)] += 1.0;
    }
    for (double& h : ref_hist_) h /= static_cast<double>(distances.size());

    // densest bins until band_mass of the reference is covered
    std::vector<int> order(static_cast<size_t>(cfg_.bins));
    for (int i = 0; i < cfg_.bins; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (ref_hist_[a] != ref_hist_[b]) return ref_hist_[a] > ref_hist_[b];
        return a < b;
    });
    double mass = 0;
    for (int bin : order) {
        band_.push_back(bin);
        mass += ref_hist_[static_cast<size_t>(bin)];
        if (mass >= cfg_.band_mass) break;
    }
    std::sort(band_.begin(), band_.end());
    has_reference_ = true;
}

void DriftMonitor::ingest(const std::vector<float>& v) {
    memory_.push_back(v);
    while (memory_.size() > cfg_.memory) memory_.pop_front();
}

std::vector<double> DriftMonitor::smoothed(const std::vector<double>& hist) const {
    // epsilon keeps every bin positive; renormalize so mass stays 1. The
    // restriction to the band happens in the KL sum, preserving the signal
    // of stream mass leaving the band entirely.
    std::vector<double> out(hist);
    double total = 0;
    for (double& v : out) {
        v += cfg_.epsilon;
        total += v;
    }
    for (double& v : out) v /= total;
    return out;
}

DriftMonitor::CheckResult DriftMonitor::check() const {
    CheckResult result;
    if (disabled_ || !has_reference_ || memory_.size() < cfg_.memory) return result;

    std::vector<double> stream_hist(static_cast<size_t>(cfg_.bins), 0.0);
    for (const auto& v : memory_) {
        double dist = distance_to_ref(v);
        int bin = static_cast<int>((dist - lo_) / (hi_ - lo_) * cfg_.bins);
        if (bin < 0) bin = 0;
        if (bin >= cfg_.bins) bin = cfg_.bins - 1;  // shifted mass piles at the edges
        stream_hist[static_cast<size_t>(bin)] += 1.0;
    }
    for (double& h : stream_hist) h /= static_cast<double>(memory_.size());

    auto p = smoothed(ref_hist_);
    auto q = smoothed(stream_hist);
    double kl = 0;
    for (int bin : band_) {
        double pb = p[static_cast<size_t>(bin)];
        double qb = q[static_cast<size_t>(bin)];
        kl += pb * std::log(pb / qb);
    }

    result.checked = true;
    result.kl = kl;
    result.drift = result.kl > cfg_.threshold;
    return result;
}

json DriftMonitor::to_json() const {
    json mem = json::array();
    for (const auto& v : memory_) mem.push_back(v);
    return json{{"has_reference", has_reference_},
                {"disabled", disabled_},
                {"ref_mean", ref_mean_},
                {"lo", lo_},
                {"hi", hi_},
                {"ref_hist", ref_hist_},
                {"band", band_},
                {"memory", mem},
                {"config",
                 json{{"memory", cfg_.memory},
                      {"bins", cfg_.bins},
                      {"band_mass", cfg_.band_mass},
                      {"threshold", cfg_.threshold},
                      {"epsilon", cfg_.epsilon}}}};
}

DriftMonitor DriftMonitor::from_json(const json& j) {
    KlConfig cfg;
    if (j.contains("config")) {
        const auto& c = j.at("config");
        cfg.memory = c.value("memory", size_t{1000});
        cfg.bins = c.value("bins", 20);
        cfg.band_mass = c.value("band_mass", 0.8);
        cfg.threshold = c.value("threshold", 0.1);
        cfg.epsilon = c.value("epsilon", 1e-6);
    }
    DriftMonitor m(cfg);
    m.has_reference_ = j.value("has_reference", false);
    m.disabled_ = j.value("disabled", false);
    m.ref_mean_ = j.value("ref_mean", std::vector<double>{});
    m.lo_ = j.value("lo", 0.0);
    m.hi_ = j.value("hi", 0.0);
    m.ref_hist_ = j.value("ref_hist", std::vector<double>{});
    m.band_ = j.value("band", std::vector<int>{});
    if (j.contains("memory")) {
        for (const auto& v : j.at("memory")) m.memory_.push_back(v.get<std::vector<float>>());
    }
    return m;
}

// ---------------------------------------------------------------------------
// Pool

void ClassifierPool::add(ClassifierRecord record, std::vector<TrainingSample> samples) {
    record.status = "active";
    samples_[record.id] = std::move(samples);
    records_.push_back(std::move(record));
    // cap active membership, evicting the oldest
    while (active_count() > cfg_.active_cap) {
        ClassifierRecord* oldest = nullptr;
        for (auto& r : records_) {
            if (r.status != "active") continue;
            if (!oldest || r.created_at_ms < oldest->created_at_ms) oldest = &r;
        }
        if (!oldest) break;
        oldest->status = "archived";
    }
    version_ += 1;
}

void ClassifierPool::archive(const std::string& id) {
    for (auto& r : records_) {
        if (r.id == id) {
            r.status = "archived";
            version_ += 1;
            return;
        }
    }
}

std::vector<const ClassifierRecord*> ClassifierPool::active() const {
    std::vector<const ClassifierRecord*> out;
    for (const auto& r : records_) {
        if (r.status == "active") out.push_back(&r);
    }
    return out;
}

ClassifierRecord* ClassifierPool::find(const std::string& id) {
    for (auto& r : records_) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

size_t ClassifierPool::active_count() const {
    size_t n = 0;
    for (const auto& r : records_) {
        if (r.status == "active") ++n;
    }
    return n;
}

const std::vector<TrainingSample>* ClassifierPool::samples_of(const std::string& id) const {
    auto it = samples_.find(id);
    return it == samples_.end() ? nullptr : &it->second;
}

std::vector<const std::vector<float>*> ClassifierPool::active_training_vectors() const {
    std::vector<const std::vector<float>*> out;
    for (const auto& r : records_) {
        if (r.status != "active") continue;
        auto it = samples_.find(r.id);
        if (it == samples_.end()) continue;
        for (const auto& s : it->second) out.push_back(&s.vector);
    }
    return out;
}

void ClassifierPool::save(const fs::path& pool_dir) const {
    ensure_dir(pool_dir);
    json active_ids = json::array();
    json archived_ids = json::array();
    for (const auto& r : records_) {
        (r.status == "active" ? active_ids : archived_ids).push_back(r.id);
        atomic_write(pool_dir / (r.id + ".json"), r.to_json().dump());
        auto it = samples_.find(r.id);
        if (it != samples_.end()) {
            std::string lines;
            for (const auto& s : it->second) {
                lines += json{{"vector", s.vector}, {"label", s.relevant ? "relevant" : "irrelevant"}}
                             .dump();
                lines += '\n';
            }
            atomic_write(pool_dir / (r.id + ".samples.jsonl"), lines);
        }
    }
    json manifest{{"version", version_},
                  {"active", active_ids},
                  {"archived", archived_ids},
                  {"pending_retrain", pending_retrain_},
                  {"pending_create", pending_create_},
                  {"monitor", monitor_.to_json()},
                  {"drift_log", drift_log_}};
    atomic_write(pool_dir / "manifest.json", manifest.dump());
}

ClassifierPool ClassifierPool::load(const fs::path& pool_dir, PoolConfig cfg) {
    ClassifierPool pool(cfg);
    auto content = read_file(pool_dir / "manifest.json");
    if (!content) return pool;
    json manifest = json::parse(*content);
    auto load_record = [&](const std::string& id) {
        auto rec_content = read_file(pool_dir / (id + ".json"));
        if (!rec_content) return;
        pool.records_.push_back(ClassifierRecord::from_json(json::parse(*rec_content)));
        auto samples_content = read_file(pool_dir / (id + ".samples.jsonl"));
        if (samples_content) {
            std::vector<TrainingSample> samples;
            size_t start = 0;
            while (start < samples_content->size()) {
                size_t end = samples_content->find('\n', start);
                if (end == std::string::npos) end = samples_content->size();
                if (end > start) {
                    json line = json::parse(samples_content->substr(start, end - start));
                    TrainingSample s;
                    s.vector = line.at("vector").get<std::vector<float>>();
                    s.relevant = line.at("label").get<std::string>() == "relevant";
                    samples.push_back(std::move(s));
                }
                start = end + 1;
            }
            pool.samples_[id] = std::move(samples);
        }
    };
    for (const auto& id : manifest.value("active", std::vector<std::string>{})) load_record(id);
    for (const auto& id : manifest.value("archived", std::vector<std::string>{})) load_record(id);
    // records loaded active-first; restore creation order for cap eviction
    std::sort(pool.records_.begin(), pool.records_.end(),
              [](const ClassifierRecord& a, const ClassifierRecord& b) {
                  if (a.created_at_ms != b.created_at_ms) return a.created_at_ms < b.created_at_ms;
                  return a.id < b.id;
              });
    pool.version_ = manifest.value("version", int64_t{0});
    pool.pending_retrain_ = manifest.value("pending_retrain", std::vector<std::string>{});
    pool.pending_create_ = manifest.value("pending_create", false);
    if (manifest.contains("monitor")) {
        pool.monitor_ = DriftMonitor::from_json(manifest.at("monitor"));
    }
    if (manifest.contains("drift_log")) {
        for (const auto& e : manifest.at("drift_log")) pool.drift_log_.push_back(e);
    }
    return pool;
}

// ---------------------------------------------------------------------------
// Classification Step

json to_json(const Prediction& p) {
    json ens = json::array();
    for (const auto& m : p.ensemble) {
        ens.push_back(json{{"classifier_id", m.classifier_id},
                           {"distance", m.distance},
                           {"weight", m.weight}});
    }
    return json{{"post_id", p.post_id},
                {"score", p.score},
                {"label", p.relevant ? "relevant" : "irrelevant"},
                {"ensemble", ens},
                {"decided_at", p.decided_at_ms}};
}

Prediction classify(const EmbeddedPost& post, const ClassifierPool& pool, int64_t now_ms) {
    auto actives = pool.active();
    if (actives.empty()) {
        throw std::logic_error("classify called with no active classifiers");
    }

    struct Scored {
        const ClassifierRecord* rec;
        double distance;
    };
    std::vector<Scored> scored;
    scored.reserve(actives.size());
    for (const auto* rec : actives) {
        double d2 = 0;
        size_t d = std::min(rec->training_mean.size(), post.vector.size());
        for (size_t i = 0; i < d; ++i) {
            double diff = static_cast<double>(post.vector[i]) - rec->training_mean[i];
            d2 += diff * diff;
        }
        scored.push_back(Scored{rec, std::sqrt(d2)});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.rec->id < b.rec->id;  // distance ties break by classifier id
    });
    size_t k = std::min(pool.config().k_ensemble, scored.size());
    scored.resize(k);

    Prediction pred;
    pred.post_id = post.post.id;
    pred.decided_at_ms = now_ms;
    double total = 0;
    for (const auto& s : scored) {
        double w = pool.config().raw_distance_weighting
                       ? s.distance
                       : 1.0 / (s.distance + pool.config().distance_epsilon);
        pred.ensemble.push_back(Prediction::Member{s.rec->id, s.distance, w});
        total += w;
    }
    if (total <= 0) {
        // degenerate (e.g. raw weighting with all-zero distances): uniform
        for (auto& m : pred.ensemble) m.weight = 1.0 / static_cast<double>(k);
    } else {
        for (auto& m : pred.ensemble) m.weight /= total;
    }
    for (size_t i = 0; i < scored.size(); ++i) {
        pred.score += pred.ensemble[i].weight * scored[i].rec->predict_probability(post.vector);
    }
    pred.relevant = pred.score >= 0.5;
    return pred;
}

// ---------------------------------------------------------------------------
// Update Step

UpdateOutcome update_step(const std::vector<TrainingSample>& batch, ClassifierPool& pool,
                          int64_t now_ms, bool ingest_batch) {
    if (batch.empty()) throw std::invalid_argument("update_step requires a nonempty batch");
    UpdateOutcome outcome;
    const PoolConfig& cfg = pool.config();

    // (1) supervised evaluation: every active classifier sees the batch
    for (const auto* rec_const : pool.active()) {
        ClassifierRecord* rec = pool.find(rec_const->id);
        DriftSignal worst = DriftSignal::kNone;
        for (const auto& s : batch) {
            bool predicted = rec->predict_probability(s.vector) >= 0.5;
            bool is_error = predicted != s.relevant;
            DriftSignal sig = eddm_update(rec->eddm, is_error, cfg.eddm);
            if (sig == DriftSignal::kDrift) worst = DriftSignal::kDrift;
            else if (sig == DriftSignal::kWarning && worst == DriftSignal::kNone)
                worst = DriftSignal::kWarning;
        }
        if (worst == DriftSignal::kDrift) {
            auto& pending = pool.pending_retrain();
            if (std::find(pending.begin(), pending.end(), rec->id) == pending.end()) {
                pending.push_back(rec->id);
                outcome.eddm_drifted.push_back(rec->id);
                pool.drift_log().push_back(json{{"at", now_ms},
                                                {"kind", "eddm_drift"},
                                                {"classifier_id", rec->id}});
            }
        }
    }

    // (2) unsupervised drift over the stream memory
    if (ingest_batch) {
        for (const auto& s : batch) pool.monitor().ingest(s.vector);
    }
    auto kl = pool.monitor().check();
    if (kl.checked) {
        outcome.kl_value = kl.kl;
        if (kl.drift) {
            outcome.kl_drift = true;
            pool.pending_create() = true;
            pool.drift_log().push_back(json{{"at", now_ms}, {"kind", "kl_drift"}, {"kl", kl.kl}});
        }
    }
    // bootstrap: an empty pool trains its first classifier from the batch
    if (pool.active_count() == 0) pool.pending_create() = true;

    // (3) deferred training actions run once the batch can train
    if (batch_trainable(batch, cfg.train)) {
        for (const auto& id : pool.pending_retrain()) {
            ClassifierRecord* old = pool.find(id);
            if (!old || old->status != "active") continue;
            std::vector<double> warm = old->weights;
            pool.archive(id);  // retain the low performer in the archive
            outcome.archived += 1;
            std::string new_id = "clf-" + to_hex(fnv1a64(id + "@" + std::to_string(now_ms)));
            auto rec = train_classifier(batch, cfg.train, new_id, now_ms, &warm);
            pool.add(std::move(rec), batch);
            outcome.retrained += 1;
        }
        pool.pending_retrain().clear();

        if (pool.pending_create()) {
            std::string new_id =
                "clf-" + to_hex(fnv1a64("create@" + std::to_string(now_ms) + ":" +
                                        std::to_string(pool.total_count())));
            auto rec = train_classifier(batch, cfg.train, new_id, now_ms, nullptr);
            pool.add(std::move(rec), batch);
            outcome.created += 1;
            pool.pending_create() = false;
            pool.monitor().reset_memory();
        }

        if (outcome.archived + outcome.retrained + outcome.created > 0) {
            pool.monitor().set_reference(pool.active_training_vectors());
        }
    }
    return outcome;
}

}  // namespace em
