#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "convsql/corpus.hpp"

namespace convsql {

// The four question-representation layouts.
//   bsp: schema lines + question
//   trp: "Given the following database schema:" / "Answer the following question:" framing
//   crp: CREATE TABLE blocks, instructions in /* */ comments
//   odp: completion-style prompt, instruction lines prefixed ###, schema lines #
enum class PromptStyle { bsp, trp, crp, odp };

PromptStyle prompt_style_from_string(std::string_view s);
std::string_view to_string(PromptStyle s);

enum class HistoryMode { questions_only, questions_and_predicted_sql, none };

HistoryMode history_mode_from_string(std::string_view s);
std::string_view to_string(HistoryMode m);

struct HistoryItem {
    std::string question;
    std::string predicted_sql;  // may be empty (then only the question is shown)
};

struct RenderedPrompt {
    std::string text;
    PromptStyle style = PromptStyle::odp;
    int shot_count = 0;
    std::int64_t estimated_tokens = 0;
};

// Pluggable token estimator; empty function means the default
// ceil(byte_length / 4), which is conservative for multi-byte text.
using TokenEstimator = std::function<std::int64_t(std::string_view)>;

std::int64_t estimate_tokens(std::string_view text);

// Schema section only, no instructions or question. with_values appends one
// line per table holding its sample rows, in the style's comment convention.
std::string render_schema(const DatabaseSchema& schema, PromptStyle style, bool with_values);

// Full single-turn prompt. History items (prior questions and, depending on
// mode, their predicted SQL) appear in turn order between the schema section
// and the target question. The returned text ends with exactly one newline.
RenderedPrompt render_zero_shot(const DatabaseSchema& schema,
                                const std::vector<HistoryItem>& history,
                                const std::string& question, PromptStyle style, HistoryMode mode,
                                bool with_values, const TokenEstimator& estimator = {});

// In-context-learning prompt: up to max_shots exemplar blocks (always in the
// trp layout, each showing the exemplar's own schema resolved through
// catalog) followed by the zero-shot render of the target. Exemplars are
// dropped from the end of the ranked list until the whole prompt fits
// budget_tokens. Throws BudgetError if the bare target render already
// exceeds the budget.
RenderedPrompt render_icl(const DatabaseSchema& schema, const std::vector<HistoryItem>& history,
                          const std::string& question, const std::vector<Exemplar>& exemplars,
                          const SchemaCatalog& catalog, PromptStyle style, HistoryMode mode,
                          bool with_values, std::int64_t budget_tokens, int max_shots,
                          const TokenEstimator& estimator = {});

}  // namespace convsql
