#include "em/embed.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "em/common.hpp"

using nlohmann::json;

namespace em {

HashEmbedding::HashEmbedding(size_t dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw std::invalid_argument("embedding dimension must be positive");
}

bool HashEmbedding::lookup(const std::string& token, std::vector<float>& out) const {
    out.assign(dim_, 0.0f);
    uint64_t h = fnv1a64(token, seed_ ^ 1469598103934665603ULL);
    size_t index = static_cast<size_t>(h % dim_);
    float sign = ((h >> 63) & 1) ? -1.0f : 1.0f;
    out[index] = sign;
    return true;
}

std::string HashEmbedding::version() const {
    return "hash" + std::to_string(dim_) + "/" + std::to_string(seed_);
}

FileEmbedding::FileEmbedding(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("embedding file not readable: " + path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string token;
        ss >> token;
        std::vector<float> vec;
        float v;
        while (ss >> v) vec.push_back(v);
        if (vec.empty()) continue;
        if (dim_ == 0) dim_ = vec.size();
        if (vec.size() != dim_) {
            throw std::runtime_error("embedding file " + path.string() + " line " +
                                     std::to_string(lineno) + ": expected " +
                                     std::to_string(dim_) + " floats, got " +
                                     std::to_string(vec.size()));
        }
        for (float f : vec) {
            if (!std::isfinite(f)) {
                throw std::runtime_error("embedding file " + path.string() + " line " +
                                         std::to_string(lineno) + ": non-finite value");
            }
        }
        vectors_[token] = std::move(vec);
    }
    if (vectors_.empty()) {
        throw std::runtime_error("embedding file " + path.string() + " holds no vectors");
    }
    version_ = "file/" + path.filename().string() + "/" + std::to_string(vectors_.size());
}

bool FileEmbedding::lookup(const std::string& token, std::vector<float>& out) const {
    auto it = vectors_.find(token);
    if (it == vectors_.end()) return false;
    out = it->second;
    return true;
}

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const json& config) {
    std::string provider = config.value("provider", "hash");
    if (provider == "hash") {
        return std::make_shared<HashEmbedding>(config.value("dim", size_t{256}),
                                               config.value("seed", uint64_t{42}));
    }
    if (provider == "file") {
        if (!config.contains("path")) {
            throw std::invalid_argument("file embedding provider needs a path");
        }
        return std::make_shared<FileEmbedding>(config.at("path").get<std::string>());
    }
    throw std::invalid_argument("unknown embedding provider: " + provider);
}

std::vector<float> embed_tokens(const std::vector<std::string>& tokens,
                                const EmbeddingProvider& provider) {
    std::vector<float> sum(provider.dim(), 0.0f);
    std::vector<float> tmp;
    size_t in_vocab = 0;
    for (const auto& t : tokens) {
        if (!provider.lookup(t, tmp)) continue;
        for (size_t i = 0; i < sum.size(); ++i) sum[i] += tmp[i];
        ++in_vocab;
    }
    if (in_vocab == 0) return sum;  // zero vector
    double norm_sq = 0;
    for (float& f : sum) {
        f /= static_cast<float>(in_vocab);
        norm_sq += static_cast<double>(f) * f;
    }
    if (norm_sq > 0) {
        float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
        for (float& f : sum) f *= inv;
    }
    return sum;
}

EmbeddedPost embed(const Post& post, const std::vector<std::string>& tokens,
                   const EmbeddingProvider& provider) {
    EmbeddedPost out;
    out.post = post;
    out.tokens = tokens;
    out.vector = embed_tokens(tokens, provider);
    out.embedding_version = provider.version();
    out.zero_vector = true;
    for (float f : out.vector) {
        if (f != 0.0f) {
            out.zero_vector = false;
            break;
        }
    }
    return out;
}

}  // namespace em
