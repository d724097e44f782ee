#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convsql/corpus.hpp"
#include "convsql/embedding.hpp"

namespace convsql {

enum class Strategy { random, qts, mqs, qrs, dail };

Strategy strategy_from_string(std::string_view s);
std::string_view to_string(Strategy s);

struct ExemplarPool {
    std::vector<Exemplar> exemplars;
    std::size_t embedding_dim = 0;
    bool embeddings_ready = false;
};

struct ScoredExemplar {
    std::size_t index = 0;
    double score = 0.0;
};

// Scores are non-increasing down the list; ties broken by lower index.
// Random selection carries score 0 for every entry.
struct SelectionResult {
    std::vector<ScoredExemplar> ranked;
    Strategy strategy = Strategy::random;
};

// Every turn of every interaction becomes one exemplar.
ExemplarPool build_pool(const Dataset& train);

// Fills question_embedding and masked_embedding for every exemplar (masking
// against the exemplar's own schema) and marks the pool ready.
void prepare_embeddings(ExemplarPool& pool, CachedEmbedder& embedder, const SchemaCatalog& catalog);

// Replaces every question token that matches a table or column name of the
// schema (case-insensitive, after trimming surrounding punctuation) with
// the literal token <MSK>. Everything else is left untouched.
std::string mask_schema_mentions(std::string_view question, const DatabaseSchema& schema);

// dot(u,v) / (|u||v|). Throws Error on dimension mismatch or a zero vector.
double cosine(const std::vector<double>& u, const std::vector<double>& v);

SelectionResult select_random(const ExemplarPool& pool, int k, std::uint64_t seed);

// Top-k by cosine between the embedded target question and each exemplar's
// question embedding. Requires embeddings_ready.
SelectionResult select_qts(const ExemplarPool& pool, const std::vector<double>& target_embedding,
                           int k);

// Same contract as select_qts but against masked embeddings; the caller
// embeds mask_schema_mentions(target, target_schema).
SelectionResult select_mqs(const ExemplarPool& pool,
                           const std::vector<double>& masked_target_embedding, int k);

// Top-k by Jaccard similarity between the predicted SQL's syntax set and
// each exemplar's gold SQL syntax set.
SelectionResult select_qrs(const ExemplarPool& pool, const std::string& predicted_sql, int k);

// Stage 1 keeps exemplars whose masked-question cosine is >= threshold;
// stage 2 re-ranks the survivors by select_qrs scoring and returns top-k.
SelectionResult select_dail(const ExemplarPool& pool,
                            const std::vector<double>& masked_target_embedding,
                            const std::string& predicted_sql, int k, double threshold);

// Convenience: embeds the target (masking it first for mqs/dail) and
// dispatches on strategy. predicted_sql is only consulted for qrs/dail.
SelectionResult select_exemplars(Strategy strategy, const ExemplarPool& pool,
                                 const std::string& target_question,
                                 const DatabaseSchema& target_schema,
                                 const std::string& predicted_sql, int k, double dail_threshold,
                                 CachedEmbedder* embedder, std::uint64_t seed);

}  // namespace convsql
