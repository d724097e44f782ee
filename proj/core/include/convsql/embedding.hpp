#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "convsql/types.hpp"

namespace convsql {

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    // One vector per input text, all of the same dimension.
    virtual std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) = 0;
    virtual std::size_t dimension() const = 0;
};

// OpenAI-compatible /embeddings endpoint. The API key is read from the named
// environment variable; the dimension is discovered on the first call.
class HttpEmbeddingProvider : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model,
                          std::string api_key_env = "CONVSQL_API_KEY");
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;
    std::size_t dimension() const override { return dimension_; }

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_env_;
    std::size_t dimension_ = 0;
};

// Deterministic offline provider: a unit vector seeded from the text hash.
// Equal texts get equal vectors; useful for end-to-end runs without a
// provider and for similarity plumbing tests.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(std::size_t dimension = 64);
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;
    std::size_t dimension() const override { return dimension_; }

private:
    std::size_t dimension_;
};

// Scripted provider for tests: explicit text -> vector map with an optional
// fallback generator, and a request counter for cache assertions.
class MockEmbeddingProvider : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dimension);
    void set(const std::string& text, std::vector<double> vec);
    void set_fallback(std::function<std::vector<double>(const std::string&)> fn);
    std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) override;
    std::size_t dimension() const override { return dimension_; }
    std::int64_t request_count() const { return request_count_; }
    std::int64_t texts_embedded() const { return texts_embedded_; }

private:
    std::size_t dimension_;
    std::unordered_map<std::string, std::vector<double>> scripted_;
    std::function<std::vector<double>(const std::string&)> fallback_;
    std::int64_t request_count_ = 0;
    std::int64_t texts_embedded_ = 0;
};

// Content-hash cache in front of a provider. Duplicate texts inside one call
// are deduplicated; known texts never reach the provider again. When a cache
// file path is given the cache is loaded from and persisted to that JSON
// file (hash -> vector).
class CachedEmbedder {
public:
    explicit CachedEmbedder(EmbeddingProvider& provider, std::filesystem::path cache_file = {});
    ~CachedEmbedder();

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);
    std::size_t dimension() const { return provider_.dimension(); }
    void flush();

private:
    EmbeddingProvider& provider_;
    std::filesystem::path cache_file_;
    std::unordered_map<std::string, std::vector<double>> cache_;
    bool dirty_ = false;
    std::mutex mutex_;
};

}  // namespace convsql
