#include "em/pipeline.hpp"

#include <algorithm>
#include <set>

#include "em/classify.hpp"
#include "em/common.hpp"
#include "em/embed.hpp"
#include "em/events.hpp"
#include "em/ingest.hpp"
#include "em/logging.hpp"
#include "em/text.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

namespace {

// global config sections shared across handlers
struct Globals {
    std::string event_type = "landslide";
    std::vector<std::string> keywords;
    std::vector<std::string> static_stopwords;
    json embedding = json{{"provider", "hash"}, {"dim", 256}, {"seed", 42}};
    GridParams grid;
    PoolConfig pool;
    StopwordConfig stopwords;
    std::string seed_gazetteer;
    size_t gazetteer_cap = 100000;
    int64_t tagger_warmup = 500;
    fs::path data_dir;
};

Globals parse_globals(const PipelineConfig& cfg) {
    Globals g;
    const json& raw = cfg.raw;
    g.data_dir = cfg.data_dir;
    g.event_type = raw.value("event_type", "landslide");
    for (const auto& k : raw.value("keywords", std::vector<std::string>{})) {
        g.keywords.push_back(lowercase_ascii(k));
    }
    if (g.keywords.empty()) g.keywords = {"landslide", "mudslide", "rockslide"};
    g.static_stopwords = raw.value("static_stopwords", std::vector<std::string>{});
    if (raw.contains("embedding")) g.embedding = raw.at("embedding");

    if (raw.contains("grid")) {
        const json& j = raw.at("grid");
        g.grid.cell_deg = j.value("cell_deg", 0.1);
        g.grid.bucket_seconds = j.value("bucket_seconds", int64_t{86400});
        g.grid.horizon_buckets = j.value("horizon_buckets", int64_t{3});
    }
    if (raw.contains("classifier")) {
        const json& j = raw.at("classifier");
        g.pool.active_cap = j.value("pool_cap", size_t{50});
        g.pool.k_ensemble = j.value("k_ensemble", size_t{5});
        g.pool.raw_distance_weighting = j.value("raw_distance_weighting", false);
        g.pool.train.epochs = j.value("epochs", 100);
        g.pool.train.learning_rate = j.value("learning_rate", 0.1);
        g.pool.train.seed = j.value("seed", uint64_t{7});
        g.pool.train.min_samples = j.value("min_train", size_t{20});
        g.pool.eddm.alpha = j.value("eddm_alpha", 0.95);
        g.pool.eddm.beta = j.value("eddm_beta", 0.90);
        g.pool.eddm.warmup_errors = j.value("eddm_warmup_errors", int64_t{30});
        g.pool.kl.memory = j.value("kl_memory", size_t{1000});
        g.pool.kl.bins = j.value("kl_bins", 20);
        g.pool.kl.band_mass = j.value("kl_band_mass", 0.8);
        g.pool.kl.threshold = j.value("kl_threshold", 0.1);
        g.pool.kl.epsilon = j.value("kl_epsilon", 1e-6);
    }
    if (raw.contains("stopwords")) {
        const json& j = raw.at("stopwords");
        g.stopwords.k_stop = j.value("k_stop", size_t{5});
        g.stopwords.min_token_len = j.value("min_token_len", size_t{3});
        g.stopwords.window_posts = j.value("window_posts", size_t{5000});
        g.stopwords.window_hours = j.value("window_hours", 24.0);
        g.stopwords.refresh_every = j.value("refresh_every", size_t{1000});
    }
    if (raw.contains("geo")) {
        const json& j = raw.at("geo");
        g.seed_gazetteer = j.value("seed_gazetteer", "");
        g.gazetteer_cap = j.value("gazetteer_cap", size_t{100000});
        g.tagger_warmup = j.value("tagger_warmup", int64_t{500});
    }
    return g;
}

fs::path stopwords_path(const Globals& g) { return g.data_dir / "stopwords" / "stopwords.json"; }
fs::path gazetteer_path(const Globals& g) { return g.data_dir / "geo" / "gazetteer.json"; }
fs::path tagger_path(const Globals& g) { return g.data_dir / "geo" / "tagger.json"; }
fs::path grid_index_path(const Globals& g) { return g.data_dir / "grid" / "index.json"; }
fs::path pool_dir(const Globals& g) { return g.data_dir / "pool"; }

Gazetteer load_or_seed_gazetteer(const Globals& g, int64_t now_ms) {
    if (auto content = read_file(gazetteer_path(g))) {
        try {
            return Gazetteer::from_json(json::parse(*content));
        } catch (const std::exception& e) {
            EM_LOG_WARN("geo", std::string("gazetteer snapshot unreadable, reseeding: ") +
                                   e.what());
        }
    }
    Gazetteer gaz(g.gazetteer_cap);
    if (!g.seed_gazetteer.empty()) gaz.load_seed_csv(g.seed_gazetteer, now_ms);
    return gaz;
}

StopwordList load_or_init_stopwords(const Globals& g) {
    auto path = stopwords_path(g);
    if (fs::exists(path)) return StopwordList::load(path);
    StopwordList list;
    for (const auto& t : g.static_stopwords) list.static_terms.insert(lowercase_ascii(t));
    list.save(path);
    return list;
}

// per-process operational counters for the stats report
class Counters {
  public:
    Counters() = default;
    Counters(fs::path data_dir, std::string name)
        : path_(std::move(data_dir)), name_(std::move(name)) {
        path_ = path_ / "counters" / (name_ + ".json");
    }
    int64_t& operator[](const std::string& key) { return values_[key]; }
    void flush() {
        if (path_.empty()) return;
        json j(values_);
        atomic_write(path_, j.dump());
    }
    void maybe_flush(int64_t every = 500) {
        if (++since_flush_ >= every) {
            flush();
            since_flush_ = 0;
        }
    }

  private:
    fs::path path_;
    std::string name_;
    std::map<std::string, int64_t> values_;
    int64_t since_flush_ = 0;
};

// ---------------------------------------------------------------------------

class ReplayStreamHandler final : public Handler {
  public:
    explicit ReplayStreamHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        corpus_path_ = ctx.spec().params.value("corpus", "");
        if (corpus_path_.empty()) throw std::runtime_error("replay_stream needs params.corpus");
        speed_ = ctx.spec().params.value("speed", 0.0);
        batch_ = ctx.spec().params.value("batch", size_t{200});
        reader_ = std::make_unique<CorpusReader>(corpus_path_);
        // resume after restart: skip everything already published
        MessageBus& bus = ctx.bus();
        already_published_ = bus.topic_end(ctx.spec().export_key);
        if (auto first = reader_->peek_timestamp()) {
            first_ts_ = *first;
            ctx.clock().advance_to_ms(*first);
        }
        wall_start_ = wall_now_ms();
    }

    std::vector<Emission> process(const Message&) override { return {}; }

    std::vector<Emission> periodic(int64_t now_ms) override {
        std::vector<Emission> out;
        if (reader_->exhausted()) return out;

        int64_t horizon;
        if (ctx_->clock().simulated()) {
            horizon = now_ms;
            if (auto next = reader_->peek_timestamp()) {
                if (*next > horizon) {
                    ctx_->clock().advance_to_ms(*next);
                    horizon = *next;
                }
            }
        } else {
            double speed = speed_ > 0 ? speed_ : 1e9;  // 0 means unpaced
            horizon = first_ts_ +
                      static_cast<int64_t>(static_cast<double>(wall_now_ms() - wall_start_) * speed);
        }

        for (auto& post : reader_->read_until(horizon, batch_)) {
            auto kw = match_keyword(post.text, globals_.keywords);
            if (!kw) {
                counters_["keyword_rejected"] += 1;
                continue;
            }
            if (skipped_replay_ < already_published_) {
                // replay after restart: these offsets are already on the bus
                ++skipped_replay_;
                ++emitted_;
                continue;
            }
            post.stream_keyword = *kw;
            post.source = "synthetic";
            ctx_->clock().advance_to_ms(post.created_at_ms);
            Emission e;
            e.payload = to_json(post).dump();
            e.id = "post:" + post.id;
            out.push_back(std::move(e));
            ++emitted_;
        }
        counters_["emitted"] = emitted_;
        counters_["skipped_malformed"] = reader_->skipped_malformed();
        counters_["skipped_no_timestamp"] = reader_->skipped_no_timestamp();
        counters_.maybe_flush(50);
        return out;
    }

    bool source_exhausted() const override { return reader_ && exhausted_check(); }

    void shutdown() override { counters_.flush(); }

  private:
    bool exhausted_check() const { return reader_->exhausted(); }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::string corpus_path_;
    double speed_ = 0;
    size_t batch_ = 200;
    std::unique_ptr<CorpusReader> reader_;
    int64_t first_ts_ = 0;
    int64_t wall_start_ = 0;
    int64_t emitted_ = 0;
    int64_t already_published_ = 0;
    int64_t skipped_replay_ = 0;
};

class CorroborativeClientHandler final : public Handler {
  public:
    explicit CorroborativeClientHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        kind_ = ctx.spec().params.value("kind", "");
        std::string fixture = ctx.spec().params.value("fixture", "");
        if (kind_.empty() || fixture.empty()) {
            throw std::runtime_error("corroborative_client needs params.kind and params.fixture");
        }
        fetcher_ = std::make_unique<FileFetcher>(fixture, source_ts_field(kind_));
        parser_ = make_source_parser(kind_);
    }

    std::vector<Emission> process(const Message&) override { return {}; }

    std::vector<Emission> periodic(int64_t) override {
        std::vector<Emission> out;
        std::vector<json> rows;
        try {
            rows = fetcher_->fetch(watermark_);
        } catch (const std::exception& e) {
            // fetch failure: watermark unchanged, retried next tick
            EM_LOG_WARN(ctx_->spec().name, std::string("fetch failed: ") + e.what());
            counters_["fetch_failures"] += 1;
            return out;
        }
        int64_t new_watermark = watermark_;
        for (const auto& row : rows) {
            auto parsed = parser_->parse(row);
            if (parsed) {
                new_watermark = std::max(new_watermark, parsed->row_ts);
                if (published_.insert(parsed->event.id).second) {
                    ctx_->clock().advance_to_ms(parsed->event.occurred_at_ms);
                    Emission e;
                    e.payload = to_json(parsed->event).dump();
                    e.id = parsed->event.id;
                    out.push_back(std::move(e));
                }
            }
        }
        watermark_ = new_watermark;
        counters_["published"] += static_cast<int64_t>(out.size());
        counters_["skipped"] = parser_->skipped;
        counters_.maybe_flush(10);
        if (out.empty()) {
            if (++quiet_ticks_ >= 2) exhausted_ = true;  // static fixture drained
        } else {
            quiet_ticks_ = 0;
        }
        return out;
    }

    bool source_exhausted() const override { return exhausted_; }
    void shutdown() override { counters_.flush(); }

  private:
    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::string kind_;
    std::unique_ptr<FileFetcher> fetcher_;
    std::unique_ptr<SourceParser> parser_;
    std::set<std::string> published_;
    int64_t watermark_ = std::numeric_limits<int64_t>::min();
    int quiet_ticks_ = 0;
    bool exhausted_ = false;
};

class NewsClientHandler final : public Handler {
  public:
    explicit NewsClientHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        std::string fixture = ctx.spec().params.value("fixture", "");
        if (fixture.empty()) throw std::runtime_error("news_client needs params.fixture");
        fetcher_ = std::make_unique<FileFetcher>(fixture, "published_at");
        double lag_days = ctx.spec().params.value("lag_days", 2.0);
        gazetteer_ = load_or_seed_gazetteer(globals_, ctx.clock().now_ms());
        std::string event_type = ctx.spec().params.value("tag", globals_.event_type);
        parser_ = std::make_unique<NewsParser>(
            event_type, static_cast<int64_t>(lag_days * 86400000.0),
            [this](const std::string& text) -> std::optional<LocationGuess> {
                auto guesses = extract_substring(text, gazetteer_);
                if (guesses.empty()) return std::nullopt;
                return guesses.front();
            });
    }

    std::vector<Emission> process(const Message&) override { return {}; }

    std::vector<Emission> periodic(int64_t) override {
        // pick up locations learned from fresh corroborative events
        if (++ticks_ % 4 == 0) gazetteer_ = load_or_seed_gazetteer(globals_, ctx_->clock().now_ms());
        std::vector<Emission> out;
        std::vector<json> rows;
        try {
            rows = fetcher_->fetch(watermark_);
        } catch (const std::exception& e) {
            EM_LOG_WARN(ctx_->spec().name, std::string("fetch failed: ") + e.what());
            return out;
        }
        int64_t new_watermark = watermark_;
        for (const auto& row : rows) {
            if (row.contains("published_at")) {
                if (auto ts = parse_timestamp(row.at("published_at").is_string()
                                                  ? row.at("published_at").get<std::string>()
                                                  : row.at("published_at").dump())) {
                    new_watermark = std::max(new_watermark, *ts);
                }
            }
            auto parsed = parser_->parse(row);
            if (parsed && published_.insert(parsed->event.id).second) {
                Emission e;
                e.payload = to_json(parsed->event).dump();
                e.id = parsed->event.id;
                out.push_back(std::move(e));
            }
        }
        watermark_ = new_watermark;
        counters_["published"] += static_cast<int64_t>(out.size());
        counters_["dropped_no_location"] = parser_->skipped;
        counters_.maybe_flush(10);
        if (out.empty()) {
            if (++quiet_ticks_ >= 2) exhausted_ = true;
        } else {
            quiet_ticks_ = 0;
        }
        return out;
    }

    bool source_exhausted() const override { return exhausted_; }
    void shutdown() override { counters_.flush(); }

  private:
    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::unique_ptr<FileFetcher> fetcher_;
    std::unique_ptr<NewsParser> parser_;
    Gazetteer gazetteer_;
    std::set<std::string> published_;
    int64_t watermark_ = std::numeric_limits<int64_t>::min();
    int64_t ticks_ = 0;
    int quiet_ticks_ = 0;
    bool exhausted_ = false;
};

class CombinerHandler final : public Handler {
  public:
    explicit CombinerHandler(Globals g)
        : globals_(std::move(g)),
          combiner_(globals_.grid, 4.0, 50.0) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        min_quake_ = ctx.spec().params.value("min_quake_magnitude", 4.0);
        min_rain_ = ctx.spec().params.value("min_rain_mm_per_day", 50.0);
        state_path_ = globals_.data_dir / "combiner" / (ctx.spec().name + ".json");
        combiner_ = QuakeRainCombiner(globals_.grid, min_quake_, min_rain_);
        if (auto content = read_file(state_path_)) {
            try {
                combiner_ = QuakeRainCombiner::from_json(json::parse(*content));
            } catch (const std::exception&) {
            }
        }
    }

    std::vector<Emission> process(const Message& m) override {
        CorroborativeEvent event = corroborative_event_from_json(json::parse(m.payload));
        std::vector<Emission> out;
        // pass the event through under its original id
        out.push_back(Emission{m.payload, "", m.id});
        for (const auto& derived : combiner_.feed(event)) {
            out.push_back(Emission{to_json(derived).dump(), "", derived.id});
        }
        // indexes persist so pairs spanning a restart still fire; the
        // emitted-set is deliberately not trusted across restarts (replayed
        // duplicates are cheaper than lost derivations)
        atomic_write(state_path_, combiner_.to_json().dump());
        return out;
    }

  private:
    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    QuakeRainCombiner combiner_;
    double min_quake_ = 4.0, min_rain_ = 50.0;
    fs::path state_path_;
};

class StopwordFilterHandler final : public Handler {
  public:
    explicit StopwordFilterHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        filtered_topic_ = ctx.spec().params.value("filtered_topic", "posts.filtered");
        list_ = load_or_init_stopwords(globals_);
    }

    std::vector<Emission> process(const Message& m) override {
        if (++since_reload_ >= 100) maybe_reload();
        Post post = post_from_json(json::parse(m.payload));
        auto tokens = tokenize(post.text);
        auto decision = filter_stopwords(tokens, list_);
        json payload{{"post", to_json(post)}, {"tokens", tokens}};
        std::vector<Emission> out;
        if (decision.filtered) {
            payload["trigger_term"] = decision.term;
            payload["stoplist_version"] = list_.version;
            bool dynamic = false;
            for (const auto& [t, c] : list_.dynamic_terms) {
                if (t == decision.term) dynamic = true;
            }
            payload["dynamic"] = dynamic;
            out.push_back(Emission{payload.dump(), filtered_topic_, "flt:" + post.id});
            counters_["filtered"] += 1;
        } else {
            out.push_back(Emission{payload.dump(), "", "cln:" + post.id});
            counters_["passed"] += 1;
        }
        counters_.maybe_flush();
        return out;
    }

    std::vector<Emission> periodic(int64_t) override {
        maybe_reload();
        return {};
    }

    void shutdown() override { counters_.flush(); }

  private:
    void maybe_reload() {
        since_reload_ = 0;
        auto path = stopwords_path(globals_);
        if (!fs::exists(path)) return;
        auto fresh = StopwordList::load(path);
        if (fresh.version != list_.version) list_ = std::move(fresh);
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::string filtered_topic_;
    StopwordList list_;
    int since_reload_ = 0;
};

class NegativeSamplerHandler final : public Handler {
  public:
    explicit NegativeSamplerHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        provider_ = make_embedding_provider(globals_.embedding);
    }

    std::vector<Emission> process(const Message& m) override {
        json j = json::parse(m.payload);
        Post post = post_from_json(j.at("post"));
        auto tokens = j.at("tokens").get<std::vector<std::string>>();
        std::string trigger = j.value("trigger_term", "");
        auto sample = make_negative_sample(tokens, trigger);
        if (sample.empty()) {
            counters_["discarded_empty"] += 1;
            counters_.maybe_flush();
            return {};
        }
        auto vec = embed_tokens(sample, *provider_);
        json payload{{"post_id", post.id},
                     {"tokens", sample},
                     {"vector", vec},
                     {"label", "irrelevant"},
                     {"created_at", post.created_at_ms},
                     {"source", "stopword_path"}};
        counters_["samples"] += 1;
        counters_.maybe_flush();
        return {Emission{payload.dump(), "", "neg:" + post.id}};
    }

    void shutdown() override { counters_.flush(); }

  private:
    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::shared_ptr<EmbeddingProvider> provider_;
};

class ExtractorHandler final : public Handler {
  public:
    explicit ExtractorHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        provider_ = make_embedding_provider(globals_.embedding);
        gazetteer_ = load_or_seed_gazetteer(globals_, ctx.clock().now_ms());
        if (auto content = read_file(tagger_path(globals_))) {
            try {
                tagger_ = TaggerModel::from_json(json::parse(*content));
            } catch (const std::exception&) {
            }
        }
        offshelf_ = std::make_unique<OffshelfTagger>();  // null implementation
    }

    std::vector<Emission> process(const Message& m) override {
        if (++since_reload_ >= 200) reload_gazetteer();
        json j = json::parse(m.payload);
        Post post = post_from_json(j.at("post"));
        auto tokens = j.at("tokens").get<std::vector<std::string>>();
        EmbeddedPost embedded = embed(post, tokens, *provider_);

        auto guesses = extract_substring(post.text, gazetteer_);
        bool substring_hit = !guesses.empty();
        for (auto& g : tagger_predict(post.text, tagger_, gazetteer_, globals_.tagger_warmup)) {
            guesses.push_back(std::move(g));
        }
        for (auto& g : offshelf_->extract(post)) guesses.push_back(std::move(g));
        auto fused = fuse(guesses, post);

        // substring evidence continuously trains the sequence tagger
        if (substring_hit) {
            auto spans = tokenize_spans(post.text);
            auto first = extract_substring(post.text, gazetteer_).front();
            auto range = token_range(spans, first.text_pos, first.text_pos + first.name.size());
            if (range.second > range.first) {
                tagger_.train_increment(spans, range.first, range.second);
                if (++tagger_updates_ % 500 == 0) persist_tagger();
            }
        }

        json payload = to_json(embedded);
        if (fused) {
            payload["location"] = json{{"name", fused->name},
                                       {"lat", fused->lat},
                                       {"lon", fused->lon},
                                       {"extractor", extractor_name(fused->extractor)},
                                       {"score", fused->score}};
            counters_["located"] += 1;
        } else {
            counters_["unlocated"] += 1;
        }
        counters_.maybe_flush();
        return {Emission{payload.dump(), "", "loc:" + post.id}};
    }

    std::vector<Emission> periodic(int64_t) override {
        reload_gazetteer();
        return {};
    }

    void shutdown() override {
        persist_tagger();
        counters_.flush();
    }

  private:
    static std::pair<size_t, size_t> token_range(const std::vector<TokenSpan>& spans,
                                                 size_t byte_begin, size_t byte_end) {
        size_t begin = spans.size(), end = 0;
        for (size_t i = 0; i < spans.size(); ++i) {
            size_t tb = spans[i].byte_pos;
            size_t te = tb + spans[i].raw.size();
            if (te > byte_begin && tb < byte_end) {
                begin = std::min(begin, i);
                end = std::max(end, i + 1);
            }
        }
        if (begin >= end) return {0, 0};
        return {begin, end};
    }

    void reload_gazetteer() {
        since_reload_ = 0;
        if (fs::exists(gazetteer_path(globals_))) {
            gazetteer_ = load_or_seed_gazetteer(globals_, ctx_->clock().now_ms());
        }
    }

    void persist_tagger() {
        atomic_write(tagger_path(globals_), tagger_.to_json().dump());
        // versioned copies let operators inspect model evolution
        if (tagger_updates_ > 0 && tagger_updates_ % 2000 == 0) {
            atomic_write(globals_.data_dir / "geo" /
                             ("tagger.v" + std::to_string(tagger_.version()) + ".json"),
                         tagger_.to_json().dump());
        }
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::shared_ptr<EmbeddingProvider> provider_;
    Gazetteer gazetteer_;
    TaggerModel tagger_;
    std::unique_ptr<OffshelfTagger> offshelf_;
    int since_reload_ = 0;
    int64_t tagger_updates_ = 0;
};

class IntegratorHandler final : public Handler {
  public:
    explicit IntegratorHandler(Globals g) : globals_(std::move(g)), index_(globals_.grid) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        training_topic_ = ctx.spec().params.value("training_topic", "training");
        detections_topic_ = ctx.spec().params.value("detections_topic", "detections");
        std::string events_topic = ctx.spec().params.value("events_topic", "corr.events");
        gazetteer_ = load_or_seed_gazetteer(globals_, ctx.clock().now_ms());
        if (auto content = read_file(grid_index_path(globals_))) {
            try {
                index_ = GridIndex::from_json(json::parse(*content));
            } catch (const std::exception&) {
            }
        }
        events_sub_ = ctx.aux_subscribe(events_topic);
    }

    std::vector<Emission> process(const Message& m) override {
        drain_events();
        json j = json::parse(m.payload);
        EmbeddedPost post = embedded_post_from_json(j);
        std::vector<Emission> out;

        if (j.contains("location") && !j.at("location").is_null()) {
            double lat = j.at("location").at("lat").get<double>();
            double lon = j.at("location").at("lon").get<double>();
            auto label = integrate(post.post.id, globals_.event_type, lat, lon,
                                   post.post.created_at_ms, index_, ctx_->clock().now_ms());
            if (label) {
                json training{{"post_id", post.post.id},
                              {"tokens", post.tokens},
                              {"vector", post.vector},
                              {"label", "relevant"},
                              {"created_at", post.post.created_at_ms},
                              {"supporting_event_id", label->supporting_event_id},
                              {"source", "corroborative_integration"}};
                out.push_back(Emission{training.dump(), training_topic_, "trn:" + post.post.id});

                Detection d;
                d.post_id = post.post.id;
                d.event_type = globals_.event_type;
                d.created_at_ms = post.post.created_at_ms;
                d.location = GeoPoint{lat, lon};
                d.location_name = j.at("location").value("name", "");
                d.provenance = "corroborated";
                d.score = 1.0;
                out.push_back(Emission{to_json(d).dump(), detections_topic_,
                                       "det:" + post.post.id});
                counters_["weak_labels"] += 1;
                counters_.maybe_flush();
                return out;  // corroborated posts bypass ML entirely
            }
        }
        counters_["forwarded_unlabeled"] += 1;
        counters_.maybe_flush();
        out.push_back(Emission{m.payload, "", "unl:" + post.post.id});
        return out;
    }

    std::vector<Emission> periodic(int64_t) override {
        drain_events();
        return {};
    }

    void shutdown() override {
        persist();
        counters_.flush();
    }

  private:
    void drain_events() {
        bool changed = false;
        while (true) {
            auto msgs = events_sub_->poll(64);
            if (msgs.empty()) break;
            for (const auto& m : msgs) {
                try {
                    auto event = corroborative_event_from_json(json::parse(m.payload));
                    gazetteer_.update(event, ctx_->clock().now_ms());
                    index_.index_event(event);
                    changed = true;
                    counters_["events_indexed"] += 1;
                } catch (const std::exception& e) {
                    EM_LOG_WARN(ctx_->spec().name,
                                std::string("bad corroborative event: ") + e.what());
                }
            }
            // persist before acknowledging so a crash replays, not forgets
            persist();
            for (const auto& m : msgs) events_sub_->acknowledge(m.offset);
        }
        if (changed) counters_.maybe_flush(1);
    }

    void persist() {
        atomic_write(grid_index_path(globals_), index_.to_json().dump());
        atomic_write(gazetteer_path(globals_), gazetteer_.to_json().dump());
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::string training_topic_;
    std::string detections_topic_;
    Gazetteer gazetteer_;
    GridIndex index_;
    std::shared_ptr<Subscription> events_sub_;
};

class ClassifierHandler final : public Handler {
  public:
    explicit ClassifierHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        irrelevant_topic_ = ctx.spec().params.value("irrelevant_topic", "posts.irrelevant");
        pending_topic_ = ctx.spec().params.value("pending_topic", "pending");
        pool_ = ClassifierPool::load(pool_dir(globals_), globals_.pool);
        pending_sub_ = ctx.aux_subscribe(pending_topic_);
    }

    std::vector<Emission> process(const Message& m) override {
        if (++since_reload_ >= 100) maybe_reload();
        json j = json::parse(m.payload);
        EmbeddedPost post = embedded_post_from_json(j);
        if (pool_.active_count() == 0) {
            counters_["routed_pending"] += 1;
            counters_.maybe_flush();
            return {Emission{m.payload, pending_topic_, "pend:" + post.post.id}};
        }
        return classify_post(std::move(post), j);
    }

    std::vector<Emission> periodic(int64_t) override {
        maybe_reload();
        drain_pending();
        return {};
    }

    void shutdown() override { counters_.flush(); }

  private:
    std::vector<Emission> classify_post(EmbeddedPost post, const json& payload_json) {
        auto pred = classify(post, pool_, ctx_->clock().now_ms());
        std::vector<Emission> out;
        if (pred.relevant) {
            Detection d;
            d.post_id = post.post.id;
            d.event_type = globals_.event_type;
            d.created_at_ms = post.post.created_at_ms;
            if (payload_json.contains("location") && !payload_json.at("location").is_null()) {
                d.location = GeoPoint{payload_json.at("location").at("lat").get<double>(),
                                      payload_json.at("location").at("lon").get<double>()};
                d.location_name = payload_json.at("location").value("name", "");
            }
            d.provenance = "ml";
            d.score = pred.score;
            out.push_back(Emission{to_json(d).dump(), "", "det:" + post.post.id});
            counters_["relevant"] += 1;
        } else {
            json irr{{"post_id", post.post.id},
                     {"tokens", post.tokens},
                     {"created_at", post.post.created_at_ms},
                     {"score", pred.score}};
            out.push_back(Emission{irr.dump(), irrelevant_topic_, "irr:" + post.post.id});
            counters_["irrelevant"] += 1;
        }
        counters_.maybe_flush();
        return out;
    }

    void drain_pending() {
        if (pool_.active_count() == 0) return;
        while (true) {
            auto msgs = pending_sub_->poll(64);
            if (msgs.empty()) break;
            for (const auto& m : msgs) {
                try {
                    json j = json::parse(m.payload);
                    EmbeddedPost post = embedded_post_from_json(j);
                    for (auto& e : classify_post(std::move(post), j)) {
                        const std::string& topic =
                            e.topic.empty() ? ctx_->spec().export_key : e.topic;
                        ctx_->bus().publish(topic, e.payload, e.id);
                    }
                } catch (const std::exception& ex) {
                    EM_LOG_WARN(ctx_->spec().name, std::string("pending replay: ") + ex.what());
                }
                pending_sub_->acknowledge(m.offset);
            }
        }
    }

    void maybe_reload() {
        since_reload_ = 0;
        auto content = read_file(pool_dir(globals_) / "manifest.json");
        if (!content) return;
        try {
            int64_t version = json::parse(*content).value("version", int64_t{0});
            if (version != pool_.version()) {
                pool_ = ClassifierPool::load(pool_dir(globals_), globals_.pool);
            }
        } catch (const std::exception&) {
        }
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::string irrelevant_topic_;
    std::string pending_topic_;
    ClassifierPool pool_;
    std::shared_ptr<Subscription> pending_sub_;
    int since_reload_ = 0;
};

class UpdaterHandler final : public Handler {
  public:
    explicit UpdaterHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        batch_size_ = ctx.spec().params.value("batch_size", size_t{48});
        monitor_from_stream_ = ctx.spec().params.value("monitor_source", "stream") == "stream";
        pool_ = ClassifierPool::load(pool_dir(globals_), globals_.pool);
        buffer_path_ = pool_dir(globals_) / "buffer.json";
        if (auto content = read_file(buffer_path_)) {
            try {
                for (const auto& s : json::parse(*content)) {
                    buffer_.push_back(TrainingSample{s.at("vector").get<std::vector<float>>(),
                                                     s.at("relevant").get<bool>()});
                }
            } catch (const std::exception&) {
            }
        }
        if (monitor_from_stream_) {
            std::string stream_topic = ctx.spec().params.value("stream_topic", "posts.located");
            stream_sub_ = ctx.aux_subscribe(stream_topic);
        }
    }

    std::vector<Emission> process(const Message& m) override {
        drain_stream();
        json j = json::parse(m.payload);
        TrainingSample s;
        s.vector = j.at("vector").get<std::vector<float>>();
        s.relevant = j.value("label", "") == "relevant";
        buffer_.push_back(std::move(s));
        persist_buffer();
        if (buffer_.size() >= batch_size_) flush();
        return {};
    }

    std::vector<Emission> periodic(int64_t) override {
        drain_stream();
        if (buffer_.size() >= globals_.pool.train.min_samples &&
            batch_trainable(buffer_, globals_.pool.train)) {
            flush();
        }
        return {};
    }

    void shutdown() override {
        if (!buffer_.empty()) flush();
        counters_.flush();
    }

  private:
    void drain_stream() {
        if (!stream_sub_) return;
        while (true) {
            auto msgs = stream_sub_->poll(256);
            if (msgs.empty()) break;
            for (const auto& m : msgs) {
                try {
                    json j = json::parse(m.payload);
                    pool_.monitor().ingest(j.at("vector").get<std::vector<float>>());
                } catch (const std::exception&) {
                }
                stream_sub_->acknowledge(m.offset);
            }
        }
    }

    void flush() {
        if (buffer_.empty()) return;
        auto outcome =
            update_step(buffer_, pool_, ctx_->clock().now_ms(), !monitor_from_stream_);
        counters_["batches"] += 1;
        counters_["archived"] += outcome.archived;
        counters_["retrained"] += outcome.retrained;
        counters_["created"] += outcome.created;
        for (const auto& id : outcome.eddm_drifted) {
            append_line(globals_.data_dir / "drift_log.jsonl",
                        json{{"at", format_iso8601(ctx_->clock().now_ms())},
                             {"kind", "eddm_drift"},
                             {"classifier_id", id}}
                            .dump());
        }
        if (outcome.kl_drift) {
            append_line(globals_.data_dir / "drift_log.jsonl",
                        json{{"at", format_iso8601(ctx_->clock().now_ms())},
                             {"kind", "kl_drift"},
                             {"kl", outcome.kl_value}}
                            .dump());
        }
        buffer_.clear();
        pool_.save(pool_dir(globals_));
        persist_buffer();
        counters_.flush();
    }

    void persist_buffer() {
        json arr = json::array();
        for (const auto& s : buffer_) {
            arr.push_back(json{{"vector", s.vector}, {"relevant", s.relevant}});
        }
        atomic_write(buffer_path_, arr.dump());
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    size_t batch_size_ = 48;
    bool monitor_from_stream_ = true;
    ClassifierPool pool_;
    std::vector<TrainingSample> buffer_;
    fs::path buffer_path_;
    std::shared_ptr<Subscription> stream_sub_;
};

class StopwordRefresherHandler final : public Handler {
  public:
    explicit StopwordRefresherHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        window_path_ = globals_.data_dir / "stopwords" / "window.json";
        if (auto content = read_file(window_path_)) {
            try {
                for (const auto& w : json::parse(*content)) {
                    window_.emplace_back(w.at("tokens").get<std::vector<std::string>>(),
                                         w.at("ts").get<int64_t>());
                }
            } catch (const std::exception&) {
            }
        }
    }

    std::vector<Emission> process(const Message& m) override {
        json j = json::parse(m.payload);
        window_.emplace_back(j.at("tokens").get<std::vector<std::string>>(),
                             j.value("created_at", ctx_->clock().now_ms()));
        while (window_.size() > globals_.stopwords.window_posts) window_.pop_front();
        ++ingested_;
        if (ingested_ % 100 == 0) persist_window();
        if (ingested_ % static_cast<int64_t>(globals_.stopwords.refresh_every) == 0) refresh();
        return {};
    }

    void shutdown() override {
        persist_window();
        counters_.flush();
    }

  private:
    void refresh() {
        int64_t now = ctx_->clock().now_ms();
        int64_t horizon = now - static_cast<int64_t>(globals_.stopwords.window_hours * 3600000.0);
        std::vector<std::vector<std::string>> recent;
        for (const auto& [tokens, ts] : window_) {
            if (ts >= horizon) recent.push_back(tokens);
        }
        auto prior = load_or_init_stopwords(globals_);
        auto next = refresh_stopwords(prior, recent, globals_.keywords, globals_.stopwords, now);
        if (next.version != prior.version) {
            next.save(stopwords_path(globals_));
            counters_["refreshes"] += 1;
            counters_.flush();
            EM_LOG_INFO(ctx_->spec().name,
                        "stopword list refreshed to version " + std::to_string(next.version));
        }
        persist_window();
    }

    void persist_window() {
        json arr = json::array();
        for (const auto& [tokens, ts] : window_) {
            arr.push_back(json{{"tokens", tokens}, {"ts", ts}});
        }
        atomic_write(window_path_, arr.dump());
    }

    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::deque<std::pair<std::vector<std::string>, int64_t>> window_;
    fs::path window_path_;
    int64_t ingested_ = 0;
};

class AggregatorHandler final : public Handler {
  public:
    explicit AggregatorHandler(Globals g) : globals_(std::move(g)) {}

    void init(HandlerContext& ctx) override {
        ctx_ = &ctx;
        counters_ = Counters(globals_.data_dir, ctx.spec().name);
        store_ = std::make_unique<EventStore>(globals_.data_dir / "events", globals_.grid);
    }

    std::vector<Emission> process(const Message& m) override {
        Detection d = detection_from_json(json::parse(m.payload));
        std::string group = store_->add(d);
        counters_["detections"] += 1;
        counters_.maybe_flush();
        json update{{"group", group},
                    {"post_id", d.post_id},
                    {"event_type", d.event_type},
                    {"provenance", d.provenance}};
        return {Emission{update.dump(), "", "agg:" + d.post_id}};
    }

    void shutdown() override { counters_.flush(); }

  private:
    Globals globals_;
    HandlerContext* ctx_ = nullptr;
    Counters counters_;
    std::unique_ptr<EventStore> store_;
};

}  // namespace

const std::map<std::string, HandlerTypeInfo>& handler_types() {
    static const std::map<std::string, HandlerTypeInfo> types = [] {
        std::map<std::string, HandlerTypeInfo> t;
        auto param_topic = [](const char* key, const char* fallback) {
            return [key = std::string(key), fallback = std::string(fallback)](
                       const ProcessSpec& s) {
                return std::vector<std::string>{s.params.value(key, fallback)};
            };
        };
        t["replay_stream"] = HandlerTypeInfo{false, nullptr, nullptr};
        t["corroborative_client"] = HandlerTypeInfo{false, nullptr, nullptr};
        t["news_client"] = HandlerTypeInfo{false, nullptr, nullptr};
        t["quake_rain_combiner"] = HandlerTypeInfo{true, nullptr, nullptr};
        t["stopword_filter"] =
            HandlerTypeInfo{true, nullptr, param_topic("filtered_topic", "posts.filtered")};
        t["negative_sampler"] = HandlerTypeInfo{true, nullptr, nullptr};
        t["extractor"] = HandlerTypeInfo{true, nullptr, nullptr};
        t["integrator"] = HandlerTypeInfo{
            true, param_topic("events_topic", "corr.events"),
            [](const ProcessSpec& s) {
                return std::vector<std::string>{s.params.value("training_topic", "training"),
                                                s.params.value("detections_topic", "detections")};
            }};
        t["classification_step"] = HandlerTypeInfo{
            true, param_topic("pending_topic", "pending"),
            [](const ProcessSpec& s) {
                return std::vector<std::string>{s.params.value("irrelevant_topic",
                                                               "posts.irrelevant"),
                                                s.params.value("pending_topic", "pending")};
            }};
        t["update_step"] = HandlerTypeInfo{
            true,
            [](const ProcessSpec& s) {
                std::vector<std::string> topics;
                if (s.params.value("monitor_source", "stream") == "stream") {
                    topics.push_back(s.params.value("stream_topic", "posts.located"));
                }
                return topics;
            },
            nullptr};
        t["stopword_refresher"] = HandlerTypeInfo{true, nullptr, nullptr};
        t["aggregator"] = HandlerTypeInfo{true, nullptr, nullptr};
        return t;
    }();
    return types;
}

HandlerFactory make_handler_factory(const PipelineConfig& cfg) {
    auto globals = std::make_shared<Globals>(parse_globals(cfg));
    return [globals](const ProcessSpec& spec) -> std::unique_ptr<Handler> {
        const Globals& g = *globals;
        if (spec.type == "replay_stream") return std::make_unique<ReplayStreamHandler>(g);
        if (spec.type == "corroborative_client")
            return std::make_unique<CorroborativeClientHandler>(g);
        if (spec.type == "news_client") return std::make_unique<NewsClientHandler>(g);
        if (spec.type == "quake_rain_combiner") return std::make_unique<CombinerHandler>(g);
        if (spec.type == "stopword_filter") return std::make_unique<StopwordFilterHandler>(g);
        if (spec.type == "negative_sampler") return std::make_unique<NegativeSamplerHandler>(g);
        if (spec.type == "extractor") return std::make_unique<ExtractorHandler>(g);
        if (spec.type == "integrator") return std::make_unique<IntegratorHandler>(g);
        if (spec.type == "classification_step") return std::make_unique<ClassifierHandler>(g);
        if (spec.type == "update_step") return std::make_unique<UpdaterHandler>(g);
        if (spec.type == "stopword_refresher")
            return std::make_unique<StopwordRefresherHandler>(g);
        if (spec.type == "aggregator") return std::make_unique<AggregatorHandler>(g);
        throw std::invalid_argument("no handler for process type '" + spec.type + "'");
    };
}

TopicMap derive_topic_map(const PipelineConfig& cfg) {
    TopicMap topics;
    for (const auto& spec : cfg.processes) {
        if (spec.type == "replay_stream" && !spec.export_key.empty()) {
            topics.posts = spec.export_key;
        } else if (spec.type == "stopword_filter") {
            topics.filtered = spec.params.value("filtered_topic", topics.filtered);
        } else if (spec.type == "extractor" && !spec.export_key.empty()) {
            topics.located = spec.export_key;
        } else if (spec.type == "integrator") {
            topics.training = spec.params.value("training_topic", topics.training);
            topics.detections = spec.params.value("detections_topic", topics.detections);
            if (!spec.export_key.empty()) topics.unlabeled = spec.export_key;
        } else if (spec.type == "classification_step") {
            topics.irrelevant = spec.params.value("irrelevant_topic", topics.irrelevant);
            topics.pending = spec.params.value("pending_topic", topics.pending);
        } else if (spec.type == "aggregator" && !spec.export_key.empty()) {
            topics.events = spec.export_key;
        }
    }
    return topics;
}

std::unique_ptr<Supervisor> make_pipeline(const PipelineConfig& cfg) {
    ensure_dir(cfg.data_dir);
    Globals g = parse_globals(cfg);
    json extra{{"grid", json{{"cell_deg", g.grid.cell_deg},
                             {"bucket_seconds", g.grid.bucket_seconds}}},
               {"event_type", g.event_type}};
    derive_topic_map(cfg).save(cfg.data_dir, extra);
    return std::make_unique<Supervisor>(cfg.processes, cfg.data_dir, make_handler_factory(cfg),
                                        cfg.raw, cfg.supervisor);
}

json default_pipeline_config(const std::string& data_dir, const std::string& corpus,
                             const std::string& corr_fixture,
                             const std::string& seed_gazetteer) {
    json processes = json::array();
    processes.push_back(json{{"name", "streamer"},
                             {"type", "replay_stream"},
                             {"export", "posts"},
                             {"periodic_interval_s", 0.5},
                             {"params", json{{"corpus", corpus}, {"speed", 0}}}});
    processes.push_back(json{{"name", "trmm"},
                             {"type", "corroborative_client"},
                             {"export", "corr.raw"},
                             {"periodic_interval_s", 10},
                             {"params", json{{"kind", "trmm"}, {"fixture", corr_fixture}}}});
    processes.push_back(json{{"name", "combiner"},
                             {"type", "quake_rain_combiner"},
                             {"import", "corr.raw"},
                             {"export", "corr.events"},
                             {"params", json::object()}});
    processes.push_back(json{{"name", "cleaner"},
                             {"type", "stopword_filter"},
                             {"import", "posts"},
                             {"export", "posts.clean"},
                             {"periodic_interval_s", 5},
                             {"params", json{{"filtered_topic", "posts.filtered"}}}});
    processes.push_back(json{{"name", "negsampler"},
                             {"type", "negative_sampler"},
                             {"import", "posts.filtered"},
                             {"export", "training"},
                             {"params", json::object()}});
    processes.push_back(json{{"name", "extractor"},
                             {"type", "extractor"},
                             {"import", "posts.clean"},
                             {"export", "posts.located"},
                             {"periodic_interval_s", 10},
                             {"params", json::object()}});
    processes.push_back(json{{"name", "integrator"},
                             {"type", "integrator"},
                             {"import", "posts.located"},
                             {"export", "posts.unlabeled"},
                             {"periodic_interval_s", 5},
                             {"params", json{{"events_topic", "corr.events"},
                                             {"training_topic", "training"},
                                             {"detections_topic", "detections"}}}});
    processes.push_back(json{{"name", "updater"},
                             {"type", "update_step"},
                             {"import", "training"},
                             {"periodic_interval_s", 5},
                             {"params", json{{"monitor_source", "stream"},
                                             {"stream_topic", "posts.located"}}}});
    processes.push_back(json{{"name", "classifier"},
                             {"type", "classification_step"},
                             {"import", "posts.unlabeled"},
                             {"export", "detections"},
                             {"periodic_interval_s", 2},
                             {"params", json{{"irrelevant_topic", "posts.irrelevant"},
                                             {"pending_topic", "pending"}}}});
    processes.push_back(json{{"name", "refresher"},
                             {"type", "stopword_refresher"},
                             {"import", "posts.irrelevant"},
                             {"params", json::object()}});
    processes.push_back(json{{"name", "aggregator"},
                             {"type", "aggregator"},
                             {"import", "detections"},
                             {"export", "events"},
                             {"params", json::object()}});

    return json{{"data_dir", data_dir},
                {"clock", "simulated"},
                {"mode", "threads"},
                {"event_type", "landslide"},
                {"keywords", {"landslide", "mudslide", "rockslide"}},
                {"static_stopwords", {"election"}},
                {"embedding", json{{"provider", "hash"}, {"dim", 256}, {"seed", 42}}},
                {"grid", json{{"cell_deg", 0.1}, {"bucket_seconds", 86400},
                              {"horizon_buckets", 3}}},
                {"geo", json{{"seed_gazetteer", seed_gazetteer}}},
                {"supervisor", json{{"check_interval_s", 0.2},
                                    {"stop_when_idle", true},
                                    {"max_runtime_s", 600}}},
                {"processes", processes}};
}

}  // namespace em
