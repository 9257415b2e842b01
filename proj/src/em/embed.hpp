#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"
#include "em/types.hpp"

namespace em {

// Read-only after construction; shareable across threads.
class EmbeddingProvider {
  public:
    virtual ~EmbeddingProvider() = default;
    virtual size_t dim() const = 0;
    // Writes the token's vector into out (resized to dim); false when the
    // token is out of vocabulary.
    virtual bool lookup(const std::string& token, std::vector<float>& out) const = 0;
    virtual std::string version() const = 0;
};

// Seeded feature hashing: every token maps to a signed one-hot direction.
// Hermetic (no model files) and deterministic across runs and platforms.
class HashEmbedding final : public EmbeddingProvider {
  public:
    explicit HashEmbedding(size_t dim = 256, uint64_t seed = 42);
    size_t dim() const override { return dim_; }
    bool lookup(const std::string& token, std::vector<float>& out) const override;
    std::string version() const override;

  private:
    size_t dim_;
    uint64_t seed_;
};

// Pretrained word-vector text file: one line per token, "token v1 ... vd".
// Throws at construction on unreadable or inconsistent files (embedding
// problems must surface at startup, never mid-stream).
class FileEmbedding final : public EmbeddingProvider {
  public:
    explicit FileEmbedding(const fs::path& path);
    size_t dim() const override { return dim_; }
    bool lookup(const std::string& token, std::vector<float>& out) const override;
    std::string version() const override { return version_; }

  private:
    size_t dim_ = 0;
    std::string version_;
    std::unordered_map<std::string, std::vector<float>> vectors_;
};

// config: {"provider":"hash","dim":256,"seed":42} or {"provider":"file","path":...}
std::shared_ptr<EmbeddingProvider> make_embedding_provider(const nlohmann::json& config);

// Mean of in-vocabulary token vectors, L2-normalized; the zero vector (with
// the flag set) only when no token is in vocabulary.
EmbeddedPost embed(const Post& post, const std::vector<std::string>& tokens,
                   const EmbeddingProvider& provider);

std::vector<float> embed_tokens(const std::vector<std::string>& tokens,
                                const EmbeddingProvider& provider);

}  // namespace em
