#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "convsql/embedding.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "httplib.h"
#include "internal.hpp"
#include "json.hpp"

namespace convsql {

using nlohmann::json;

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::string model,
                                             std::string api_key_env)
    : base_url_(std::move(base_url)), model_(std::move(model)),
      api_key_env_(std::move(api_key_env)) {}

std::vector<std::vector<double>> HttpEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    const std::string api_key = detail::getenv_or(api_key_env_.c_str(), "");
    if (api_key.empty())
        throw ConfigError("embedding API key not set; export " + api_key_env_);

    // Split base_url into host part and path prefix.
    std::string host = base_url_;
    std::string prefix;
    const std::size_t scheme = host.find("://");
    const std::size_t path_start = host.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start != std::string::npos) {
        prefix = host.substr(path_start);
        host = host.substr(0, path_start);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }

    httplib::Client client(host);
    client.set_read_timeout(120, 0);
    client.set_connection_timeout(30, 0);

    json body;
    body["model"] = model_;
    body["input"] = texts;

    httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
    auto res = client.Post(prefix + "/embeddings", headers, body.dump(), "application/json");
    if (!res)
        throw LlmError("embedding request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw LlmError("embedding request returned HTTP " + std::to_string(res->status) + ": " +
                       res->body);

    json doc;
    try {
        doc = json::parse(res->body);
    } catch (const json::exception& e) {
        throw LlmError(std::string("malformed embedding response: ") + e.what());
    }
    if (!doc.contains("data") || !doc["data"].is_array() || doc["data"].size() != texts.size())
        throw LlmError("embedding response does not match request size");

    std::vector<std::vector<double>> out(texts.size());
    for (const auto& item : doc["data"]) {
        const std::size_t index = item.at("index").get<std::size_t>();
        if (index >= out.size()) throw LlmError("embedding response index out of range");
        out[index] = item.at("embedding").get<std::vector<double>>();
    }
    for (const auto& v : out) {
        if (v.empty()) throw LlmError("embedding response is missing a vector");
        if (dimension_ == 0) dimension_ = v.size();
        if (v.size() != dimension_)
            throw LlmError("embedding dimension mismatch: expected " +
                           std::to_string(dimension_) + ", got " + std::to_string(v.size()));
    }
    return out;
}

HashEmbeddingProvider::HashEmbeddingProvider(std::size_t dimension) : dimension_(dimension) {
    if (dimension_ == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<std::vector<double>> HashEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::mt19937_64 rng(detail::fnv1a64(text));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> v(dimension_);
        double norm_sq = 0.0;
        for (auto& x : v) {
            x = gauss(rng);
            norm_sq += x * x;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > 0)
            for (auto& x : v) x /= norm;
        else
            v[0] = 1.0;
        out.push_back(std::move(v));
    }
    return out;
}

MockEmbeddingProvider::MockEmbeddingProvider(std::size_t dimension) : dimension_(dimension) {}

void MockEmbeddingProvider::set(const std::string& text, std::vector<double> vec) {
    if (vec.size() != dimension_)
        throw ConfigError("scripted embedding has wrong dimension for: " + text);
    scripted_[text] = std::move(vec);
}

void MockEmbeddingProvider::set_fallback(
    std::function<std::vector<double>(const std::string&)> fn) {
    fallback_ = std::move(fn);
}

std::vector<std::vector<double>> MockEmbeddingProvider::embed_batch(
    const std::vector<std::string>& texts) {
    ++request_count_;
    texts_embedded_ += static_cast<std::int64_t>(texts.size());
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        auto it = scripted_.find(text);
        if (it != scripted_.end()) {
            out.push_back(it->second);
            continue;
        }
        if (!fallback_) throw LlmError("no scripted embedding for: " + text);
        auto v = fallback_(text);
        if (v.size() != dimension_)
            throw LlmError("fallback embedding has wrong dimension for: " + text);
        out.push_back(std::move(v));
    }
    return out;
}

CachedEmbedder::CachedEmbedder(EmbeddingProvider& provider, std::filesystem::path cache_file)
    : provider_(provider), cache_file_(std::move(cache_file)) {
    if (cache_file_.empty() || !std::filesystem::exists(cache_file_)) return;
    std::ifstream in(cache_file_);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception&) {
        return;  // Corrupt caches are rebuilt, not fatal.
    }
    if (!doc.is_object()) return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (it.value().is_array()) cache_[it.key()] = it.value().get<std::vector<double>>();
    }
}

CachedEmbedder::~CachedEmbedder() {
    try {
        flush();
    } catch (...) {
        // Destructor must not throw; a failed cache write only costs re-embedding.
    }
}

std::vector<std::vector<double>> CachedEmbedder::embed(const std::vector<std::string>& texts) {
    std::lock_guard<std::mutex> lock(mutex_);

    std::vector<std::string> keys(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) keys[i] = detail::sha256_hex(texts[i]);

    // Unique missing texts, first-occurrence order.
    std::vector<std::string> missing_texts;
    std::vector<std::string> missing_keys;
    std::unordered_map<std::string, std::size_t> scheduled;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (cache_.count(keys[i]) || scheduled.count(keys[i])) continue;
        scheduled.emplace(keys[i], missing_texts.size());
        missing_texts.push_back(texts[i]);
        missing_keys.push_back(keys[i]);
    }

    if (!missing_texts.empty()) {
        auto vectors = provider_.embed_batch(missing_texts);
        if (vectors.size() != missing_texts.size())
            throw LlmError("embedding provider returned wrong batch size");
        for (std::size_t i = 0; i < vectors.size(); ++i)
            cache_[missing_keys[i]] = std::move(vectors[i]);
        dirty_ = true;
    }

    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& key : keys) out.push_back(cache_.at(key));
    return out;
}

void CachedEmbedder::flush() {
    std::lock_guard<std::mutex> lock(mutex_);
    if (cache_file_.empty() || !dirty_) return;
    json doc = json::object();
    for (const auto& [key, vec] : cache_) doc[key] = vec;
    detail::write_text_file_atomic(cache_file_, doc.dump());
    dirty_ = false;
}

}  // namespace convsql
