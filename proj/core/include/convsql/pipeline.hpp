#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "convsql/corpus.hpp"
#include "convsql/llm.hpp"
#include "convsql/promptgen.hpp"
#include "convsql/select.hpp"

namespace convsql {

enum class CorrectorMode { off, verifier, corrector };

CorrectorMode corrector_mode_from_string(std::string_view s);
std::string_view to_string(CorrectorMode m);

struct StrategySettings {
    Strategy strategy = Strategy::random;
    int k = 3;
    double dail_threshold = 0.7;
};

struct RunConfig {
    PromptStyle style = PromptStyle::odp;
    HistoryMode history_mode = HistoryMode::questions_and_predicted_sql;
    std::optional<StrategySettings> selection;  // nullopt: zero-shot prompt
    bool reviser = false;                       // revision flow instead of plain generation
    bool reviser_with_exemplars = false;        // prepend QRS-ranked exemplars to revision prompts
    bool with_values = false;
    int value_rows = 3;
    std::int64_t budget_tokens = 4096;
    int max_shots = 3;
    CorrectorMode corrector = CorrectorMode::off;
    int verifier_max_retries = 1;
    std::string generator_model = "gpt-3.5-turbo";
    std::string corrector_model = "gpt-3.5-turbo";    // the fine-tuned endpoint in real runs
    std::string preliminary_model;                    // empty: zero-shot odp via generator model
    int max_output_tokens = 512;
    double temperature = 0.0;
    std::uint64_t seed = 0;  // random selection only
};

struct VerifierVerdict {
    bool is_correct = false;
    std::string explanation;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct Prediction {
    std::string interaction_id;
    int turn_position = 0;
    std::string raw_response;
    std::string extracted_sql;  // empty when extraction failed
    std::optional<std::string> corrected_sql;
    std::vector<VerifierVerdict> verdicts;
    TokenUsage usage;
    bool corrector_fallback = false;   // corrector reply had no SQL, input kept
    std::int64_t correction_calls = 0; // chat calls spent on verify/correct flows

    // What later turns and the scorer should believe for this turn.
    const std::string& final_sql() const {
        return corrected_sql ? *corrected_sql : extracted_sql;
    }
};

struct FinetuneRecord {
    std::string schema_text;  // rendered schema (bsp layout)
    std::string question;
    std::string input_sql;
    std::string gold_sql;
};

struct FinetuneSample {
    enum class Label { correct_passthrough, corrected };
    std::vector<ChatMessage> messages;  // exactly [system, user, assistant]
    Label label = Label::corrected;
};

struct FinetuneBuild {
    std::vector<FinetuneSample> samples;
    std::size_t n_passthrough = 0;
    std::size_t n_corrected = 0;
};

const std::string& corrector_system_prompt();

// Corrector/fine-tune user message: schema, quoted question, SQL.
std::string corrector_user_message(const std::string& schema_text, const std::string& question,
                                   const std::string& sql);

// Case-insensitive leading true/false with optional punctuation and an
// explanation tail; anything unparseable maps to false with the raw text.
VerifierVerdict parse_verifier_response(const std::string& raw);

// One sample per record: assistant repeats the input when it equals gold
// (correct_passthrough), otherwise emits the gold (corrected).
// Throws ParseError on a record with an empty question or gold.
FinetuneBuild build_finetune_dataset(const std::vector<FinetuneRecord>& records);

void write_finetune_jsonl(const FinetuneBuild& build, const std::filesystem::path& path);
std::vector<FinetuneSample> parse_finetune_jsonl(const std::filesystem::path& path);

// Fine-tune job parameters stub emitted next to the dataset file.
void write_finetune_job_config(const std::string& base_model, int epochs,
                               const std::filesystem::path& dataset_file,
                               const std::filesystem::path& path);

class Pipeline {
public:
    Pipeline(ChatClient& client, const SchemaCatalog& catalog, RunConfig config,
             const ExemplarPool* pool = nullptr, CachedEmbedder* embedder = nullptr);

    // Turns run strictly in order; each turn's prompt carries the history the
    // config asks for, where prior SQL is the corrected SQL when present.
    // An LLM failure stops the interaction: completed turns keep their
    // predictions and the remaining turns come back unanswered (empty SQL).
    std::vector<Prediction> run_interaction(const Interaction& interaction);

    // Interactions may run on up to `workers` threads; output order matches
    // dataset order regardless of scheduling.
    std::vector<Prediction> run_dataset(const Dataset& dataset, int workers = 1,
                                        const std::function<void(const Interaction&)>& progress = {});

    // Revision flow: schema + question + preliminary SQL + the instruction to
    // rewrite if correct, modify if not. Throws Error on empty preliminary SQL.
    Prediction revise(const DatabaseSchema& schema, const std::vector<HistoryItem>& history,
                      const std::string& question, const std::string& preliminary_sql);

    VerifierVerdict verify(const DatabaseSchema& schema, const std::string& question,
                           const std::string& sql);

    // Single-call detect-and-fix; extraction failure falls back to the input.
    std::string correct(const DatabaseSchema& schema, const std::string& question,
                        const std::string& sql, bool& fallback);

    const RunConfig& config() const { return config_; }

private:
    Prediction run_turn(const DatabaseSchema& schema, const Interaction& interaction,
                        const Turn& turn, const std::vector<HistoryItem>& history);
    std::string preliminary_sql(const DatabaseSchema& schema,
                                const std::vector<HistoryItem>& history,
                                const std::string& question);
    RenderedPrompt build_prompt(const DatabaseSchema& schema,
                                const std::vector<HistoryItem>& history,
                                const std::string& question, const std::string& predicted_sql,
                                std::uint64_t turn_seed);
    ChatResponse chat_user(const std::string& model, const std::string& prompt, TokenUsage& usage);

    ChatClient& client_;
    const SchemaCatalog& catalog_;
    RunConfig config_;
    const ExemplarPool* pool_;
    CachedEmbedder* embedder_;
};

// Line-delimited prediction records; the writer is deterministic so warm
// re-runs produce byte-identical files.
void write_predictions_jsonl(const std::vector<Prediction>& predictions,
                             const std::filesystem::path& path);
std::vector<Prediction> load_predictions_jsonl(const std::filesystem::path& path);

}  // namespace convsql
