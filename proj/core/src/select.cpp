#include "convsql/select.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "convsql/sqltext.hpp"
#include "internal.hpp"

namespace convsql {

Strategy strategy_from_string(std::string_view s) {
    const std::string t = detail::ascii_lower(s);
    if (t == "random") return Strategy::random;
    if (t == "qts" || t == "qtss") return Strategy::qts;
    if (t == "mqs" || t == "mqss") return Strategy::mqs;
    if (t == "qrs" || t == "qrss") return Strategy::qrs;
    if (t == "dail" || t == "dails") return Strategy::dail;
    throw ConfigError("unknown selection strategy: " + std::string(s));
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::random: return "random";
        case Strategy::qts: return "qts";
        case Strategy::mqs: return "mqs";
        case Strategy::qrs: return "qrs";
        case Strategy::dail: return "dail";
    }
    return "random";
}

ExemplarPool build_pool(const Dataset& train) {
    ExemplarPool pool;
    for (const auto& interaction : train.interactions) {
        for (const auto& turn : interaction.turns) {
            Exemplar ex;
            ex.db_id = interaction.db_id;
            ex.question = turn.question;
            ex.gold_sql = turn.gold_sql;
            pool.exemplars.push_back(std::move(ex));
        }
    }
    return pool;
}

namespace {

// Multi-byte UTF-8 units count as word characters so Arabic words survive
// punctuation trimming untouched.
bool is_mask_word_char(unsigned char c) {
    return c >= 0x80 || std::isalnum(c) || c == '_';
}

}  // namespace

std::string mask_schema_mentions(std::string_view question, const DatabaseSchema& schema) {
    std::unordered_set<std::string> names;
    for (const auto& table : schema.tables) {
        names.insert(detail::ascii_lower(table.name));
        for (const auto& col : table.columns) names.insert(detail::ascii_lower(col.name));
    }

    std::string out;
    out.reserve(question.size());
    std::size_t i = 0;
    while (i < question.size()) {
        if (std::isspace(static_cast<unsigned char>(question[i]))) {
            out.push_back(question[i++]);
            continue;
        }
        std::size_t end = i;
        while (end < question.size() &&
               !std::isspace(static_cast<unsigned char>(question[end])))
            ++end;
        std::string_view chunk = question.substr(i, end - i);

        std::size_t core_begin = 0, core_end = chunk.size();
        while (core_begin < core_end &&
               !is_mask_word_char(static_cast<unsigned char>(chunk[core_begin])))
            ++core_begin;
        while (core_end > core_begin &&
               !is_mask_word_char(static_cast<unsigned char>(chunk[core_end - 1])))
            --core_end;

        const std::string core = detail::ascii_lower(chunk.substr(core_begin, core_end - core_begin));
        if (!core.empty() && names.count(core)) {
            out.append(chunk.substr(0, core_begin));
            out.append("<MSK>");
            out.append(chunk.substr(core_end));
        } else {
            out.append(chunk);
        }
        i = end;
    }
    return out;
}

void prepare_embeddings(ExemplarPool& pool, CachedEmbedder& embedder,
                        const SchemaCatalog& catalog) {
    if (pool.exemplars.empty()) {
        pool.embeddings_ready = true;
        return;
    }
    std::vector<std::string> texts;
    texts.reserve(pool.exemplars.size() * 2);
    for (const auto& ex : pool.exemplars) texts.push_back(ex.question);
    for (const auto& ex : pool.exemplars) {
        auto it = catalog.find(ex.db_id);
        if (it == catalog.end())
            throw Error("exemplar references unknown database: " + ex.db_id);
        texts.push_back(mask_schema_mentions(ex.question, it->second));
    }

    const auto vectors = embedder.embed(texts);
    const std::size_t n = pool.exemplars.size();
    pool.embedding_dim = vectors.empty() ? 0 : vectors.front().size();
    for (std::size_t i = 0; i < n; ++i) {
        if (vectors[i].size() != pool.embedding_dim || vectors[n + i].size() != pool.embedding_dim)
            throw LlmError("embedding dimension mismatch while preparing pool");
        pool.exemplars[i].question_embedding = vectors[i];
        pool.exemplars[i].masked_embedding = vectors[n + i];
    }
    pool.embeddings_ready = true;
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size())
        throw Error("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                    std::to_string(v.size()) + ")");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw Error("cosine: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace {

// Sort by score descending, ties by lower index, and truncate to k.
std::vector<ScoredExemplar> top_k(std::vector<ScoredExemplar> scored, int k) {
    std::sort(scored.begin(), scored.end(), [](const ScoredExemplar& a, const ScoredExemplar& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    if (k >= 0 && scored.size() > static_cast<std::size_t>(k))
        scored.resize(static_cast<std::size_t>(k));
    return scored;
}

void require_ready(const ExemplarPool& pool) {
    if (!pool.embeddings_ready) throw Error("exemplar pool embeddings not prepared");
}

std::vector<ScoredExemplar> score_by_embedding(const ExemplarPool& pool,
                                               const std::vector<double>& target, bool masked) {
    std::vector<ScoredExemplar> scored;
    scored.reserve(pool.exemplars.size());
    for (std::size_t i = 0; i < pool.exemplars.size(); ++i) {
        const auto& emb = masked ? pool.exemplars[i].masked_embedding
                                 : pool.exemplars[i].question_embedding;
        if (!emb) throw Error("exemplar " + std::to_string(i) + " lacks an embedding");
        scored.push_back({i, cosine(target, *emb)});
    }
    return scored;
}

std::vector<ScoredExemplar> score_by_jaccard(const ExemplarPool& pool,
                                             const std::string& predicted_sql) {
    const SyntaxSet pred = syntax_set(predicted_sql);
    std::vector<ScoredExemplar> scored;
    scored.reserve(pool.exemplars.size());
    for (std::size_t i = 0; i < pool.exemplars.size(); ++i)
        scored.push_back({i, jaccard(pred, syntax_set(pool.exemplars[i].gold_sql))});
    return scored;
}

}  // namespace

SelectionResult select_random(const ExemplarPool& pool, int k, std::uint64_t seed) {
    SelectionResult result;
    result.strategy = Strategy::random;
    if (k <= 0 || pool.exemplars.empty()) return result;

    std::vector<std::size_t> indices(pool.exemplars.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    const std::size_t take = std::min<std::size_t>(indices.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < take; ++i) result.ranked.push_back({indices[i], 0.0});
    return result;
}

SelectionResult select_qts(const ExemplarPool& pool, const std::vector<double>& target_embedding,
                           int k) {
    require_ready(pool);
    SelectionResult result;
    result.strategy = Strategy::qts;
    if (k <= 0) return result;
    result.ranked = top_k(score_by_embedding(pool, target_embedding, false), k);
    return result;
}

SelectionResult select_mqs(const ExemplarPool& pool,
                           const std::vector<double>& masked_target_embedding, int k) {
    require_ready(pool);
    SelectionResult result;
    result.strategy = Strategy::mqs;
    if (k <= 0) return result;
    result.ranked = top_k(score_by_embedding(pool, masked_target_embedding, true), k);
    return result;
}

SelectionResult select_qrs(const ExemplarPool& pool, const std::string& predicted_sql, int k) {
    SelectionResult result;
    result.strategy = Strategy::qrs;
    if (k <= 0) return result;
    result.ranked = top_k(score_by_jaccard(pool, predicted_sql), k);
    return result;
}

SelectionResult select_dail(const ExemplarPool& pool,
                            const std::vector<double>& masked_target_embedding,
                            const std::string& predicted_sql, int k, double threshold) {
    require_ready(pool);
    SelectionResult result;
    result.strategy = Strategy::dail;
    if (k <= 0) return result;

    const auto stage1 = score_by_embedding(pool, masked_target_embedding, true);
    std::unordered_set<std::size_t> survivors;
    for (const auto& s : stage1)
        if (s.score >= threshold) survivors.insert(s.index);

    const SyntaxSet pred = syntax_set(predicted_sql);
    std::vector<ScoredExemplar> scored;
    scored.reserve(survivors.size());
    for (std::size_t i = 0; i < pool.exemplars.size(); ++i) {
        if (!survivors.count(i)) continue;
        scored.push_back({i, jaccard(pred, syntax_set(pool.exemplars[i].gold_sql))});
    }
    result.ranked = top_k(std::move(scored), k);
    return result;
}

SelectionResult select_exemplars(Strategy strategy, const ExemplarPool& pool,
                                 const std::string& target_question,
                                 const DatabaseSchema& target_schema,
                                 const std::string& predicted_sql, int k, double dail_threshold,
                                 CachedEmbedder* embedder, std::uint64_t seed) {
    auto embed_one = [&](const std::string& text) {
        if (!embedder) throw ConfigError("strategy requires an embedding provider");
        return embedder->embed({text}).front();
    };
    switch (strategy) {
        case Strategy::random: return select_random(pool, k, seed);
        case Strategy::qts: return select_qts(pool, embed_one(target_question), k);
        case Strategy::mqs:
            return select_mqs(pool, embed_one(mask_schema_mentions(target_question, target_schema)),
                              k);
        case Strategy::qrs: return select_qrs(pool, predicted_sql, k);
        case Strategy::dail:
            return select_dail(pool,
                               embed_one(mask_schema_mentions(target_question, target_schema)),
                               predicted_sql, k, dail_threshold);
    }
    throw ConfigError("unknown selection strategy");
}

}  // namespace convsql
