#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"
#include "em/types.hpp"

namespace em {

struct TrainingSample {
    std::vector<float> vector;
    bool relevant = false;
};

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 0.1;
    uint64_t seed = 7;  // reserved for stochastic schedules; full-batch GD is deterministic
    size_t min_samples = 20;
};

// ---------------------------------------------------------------------------
// EDDM: drift from the shrinking distance (in samples) between errors.

struct EddmConfig {
    double alpha = 0.95;  // warning threshold
    double beta = 0.90;   // drift threshold
    int64_t warmup_errors = 30;
};

struct EddmState {
    int64_t samples_seen = 0;
    int64_t last_error_index = -1;
    int64_t error_count = 0;
    int64_t distance_count = 0;
    double p_mean = 0;  // running mean of between-error distances
    double m2 = 0;      // Welford accumulator
    double p_max = 0;
    double s_max = 0;  // (p_max, s_max) taken at the maximum of p + 2s

    double s_std() const;

    nlohmann::json to_json() const;
    static EddmState from_json(const nlohmann::json& j);
};

enum class DriftSignal { kNone, kWarning, kDrift };

// Advances the state by one sample. On an error, the distance since the
// previous error updates the running mean/std; the signal compares
// (p + 2s) against its historical maximum. Silent until warmup errors.
DriftSignal eddm_update(EddmState& state, bool is_error, const EddmConfig& cfg);

// ---------------------------------------------------------------------------
// Classifier records

struct ClassifierRecord {
    std::string id;
    std::vector<double> weights;        // d+1; bias last
    std::vector<double> training_mean;  // d; the pool's distance index
    std::string status = "active";      // active | archived
    int64_t created_at_ms = 0;
    EddmState eddm;
    int64_t trained_samples = 0;

    double predict_probability(const std::vector<float>& x) const;

    nlohmann::json to_json() const;
    static ClassifierRecord from_json(const nlohmann::json& j);
};

// Logistic-loss linear model fit by full-batch gradient descent on a fixed
// schedule. Requires min_samples with both classes present; throws
// std::invalid_argument otherwise (callers defer training instead).
ClassifierRecord train_classifier(const std::vector<TrainingSample>& samples,
                                  const TrainConfig& cfg, const std::string& id, int64_t now_ms,
                                  const std::vector<double>* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Unsupervised drift: KL divergence over the high-density band of the
// distance-to-reference-mean distribution.

struct KlConfig {
    size_t memory = 1000;  // stream FIFO length
    int bins = 20;
    double band_mass = 0.8;
    double threshold = 0.1;
    double epsilon = 1e-6;
};

// Raw KL kernel over two distributions of equal length (no smoothing).
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

class DriftMonitor {
  public:
    explicit DriftMonitor(KlConfig cfg = {}) : cfg_(cfg) {}

    // Builds the reference histogram from the active pool's training
    // vectors. A degenerate reference (zero variance) disables the monitor.
    void set_reference(const std::vector<const std::vector<float>*>& training_vectors);

    void ingest(const std::vector<float>& v);

    struct CheckResult {
        bool checked = false;  // false until the stream memory is full
        bool drift = false;
        double kl = 0;
    };
    CheckResult check() const;

    void reset_memory() { memory_.clear(); }
    bool disabled() const { return disabled_; }
    bool has_reference() const { return has_reference_; }
    size_t memory_size() const { return memory_.size(); }
    const KlConfig& config() const { return cfg_; }

    nlohmann::json to_json() const;
    static DriftMonitor from_json(const nlohmann::json& j);

  private:
    KlConfig cfg_;
    bool has_reference_ = false;
    bool disabled_ = false;
    std::vector<double> ref_mean_;
    double lo_ = 0, hi_ = 0;
    std::vector<double> ref_hist_;  // normalized over all bins
    std::vector<int> band_;        // bin indices of the densest band_mass
    std::deque<std::vector<float>> memory_;

    double distance_to_ref(const std::vector<float>& v) const;
    std::vector<double> smoothed(const std::vector<double>& hist) const;
};

// ---------------------------------------------------------------------------
// Pool: classifiers indexed by training mean, persisted one record per file
// plus a training-sample sidecar, swapped via a versioned manifest.

struct PoolConfig {
    size_t active_cap = 50;
    size_t k_ensemble = 5;
    double distance_epsilon = 1e-9;
    // the default weights nearer classifiers higher (1/(d+eps)); the flag
    // switches to weighting by raw distance instead
    bool raw_distance_weighting = false;
    TrainConfig train;
    EddmConfig eddm;
    KlConfig kl;
};

class ClassifierPool {
  public:
    ClassifierPool() : monitor_(cfg_.kl) {}
    explicit ClassifierPool(PoolConfig cfg) : cfg_(cfg), monitor_(cfg_.kl) {}

    const PoolConfig& config() const { return cfg_; }

    // Adds an active record; beyond the cap the oldest active record is
    // archived. Samples become the record's persisted training data.
    void add(ClassifierRecord record, std::vector<TrainingSample> samples);
    void archive(const std::string& id);

    std::vector<const ClassifierRecord*> active() const;
    ClassifierRecord* find(const std::string& id);
    size_t active_count() const;
    size_t total_count() const { return records_.size(); }
    int64_t version() const { return version_; }

    const std::vector<TrainingSample>* samples_of(const std::string& id) const;
    std::vector<const std::vector<float>*> active_training_vectors() const;

    void save(const fs::path& pool_dir) const;
    static ClassifierPool load(const fs::path& pool_dir, PoolConfig cfg);

    DriftMonitor& monitor() { return monitor_; }
    const DriftMonitor& monitor() const { return monitor_; }

    // ids whose EDDM fired but whose retrain awaits a trainable batch
    std::vector<std::string>& pending_retrain() { return pending_retrain_; }
    bool& pending_create() { return pending_create_; }

    std::vector<nlohmann::json>& drift_log() { return drift_log_; }

  private:
    PoolConfig cfg_;
    std::vector<ClassifierRecord> records_;  // creation order
    std::map<std::string, std::vector<TrainingSample>> samples_;
    DriftMonitor monitor_{};
    std::vector<std::string> pending_retrain_;
    bool pending_create_ = false;
    int64_t version_ = 0;
    std::vector<nlohmann::json> drift_log_;
};

struct Prediction {
    std::string post_id;
    double score = 0;
    bool relevant = false;
    struct Member {
        std::string classifier_id;
        double distance = 0;
        double weight = 0;
    };
    std::vector<Member> ensemble;
    int64_t decided_at_ms = 0;
};

nlohmann::json to_json(const Prediction& p);

// Dynamic ensemble: the k active classifiers whose training means lie
// nearest the post, combined with distance weights. Throws
// std::logic_error on an empty pool (callers route to `pending`).
Prediction classify(const EmbeddedPost& post, const ClassifierPool& pool, int64_t now_ms);

struct UpdateOutcome {
    int archived = 0;
    int retrained = 0;
    int created = 0;
    std::vector<std::string> eddm_drifted;
    bool kl_drift = false;
    double kl_value = 0;
};

// The Update Step: EDDM evaluation of every active classifier over the
// batch, retrain-on-drift with archival of the prior record, unsupervised
// KL drift detection feeding brand-new classifiers, and training-mean
// indexing of everything new. Batches too small to train only advance the
// bookkeeping; deferred actions run once a trainable batch arrives.
UpdateOutcome update_step(const std::vector<TrainingSample>& batch, ClassifierPool& pool,
                          int64_t now_ms, bool ingest_batch = true);

bool batch_trainable(const std::vector<TrainingSample>& batch, const TrainConfig& cfg);

}  // namespace em
