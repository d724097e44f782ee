#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "convsql/corpus.hpp"
#include "convsql/types.hpp"

namespace convsql {

enum class ExecStatus { rows, error, timeout };

std::string_view to_string(ExecStatus s);

struct ExecutionOutcome {
    ExecStatus status = ExecStatus::error;
    std::vector<Row> rows;  // present iff status == rows
    std::string error_text;
};

// Runs one statement against the database, opened read-only: writes fail,
// errors and timeouts come back in the status instead of escaping. Rows are
// returned in engine order.
ExecutionOutcome execute_sql(const std::filesystem::path& db_file, const std::string& sql,
                             std::chrono::milliseconds timeout = std::chrono::seconds(30));

struct CompareOptions {
    bool order_sensitive = false;
    bool column_permutation_tolerant = false;
    double epsilon = 0.0;  // 0 = exact (after integral-real normalization)
};

// False unless both outcomes produced rows. Ordered row-list equality when
// order_sensitive, multiset equality otherwise. Integral reals compare equal
// to their integer value; text compares exactly.
bool compare_outcomes(const ExecutionOutcome& gold, const ExecutionOutcome& pred,
                      const CompareOptions& options);

inline bool compare_outcomes(const ExecutionOutcome& gold, const ExecutionOutcome& pred,
                             bool order_sensitive) {
    return compare_outcomes(gold, pred, CompareOptions{.order_sensitive = order_sensitive});
}

struct TurnResult {
    std::string interaction_id;
    int turn_position = 0;
    bool correct = false;
    ExecStatus gold_status = ExecStatus::error;
    ExecStatus pred_status = ExecStatus::error;
    std::string detail;  // diagnostics: missing prediction, db error, ...
};

struct EvalReport {
    double ex = 0.0;  // 100 * correct turns / n_questions
    double ix = 0.0;  // 100 * fully-correct interactions / n_interactions
    std::size_t n_questions = 0;
    std::size_t n_interactions = 0;
    std::size_t n_correct_turns = 0;
    std::size_t n_correct_interactions = 0;
    std::vector<TurnResult> per_turn;
};

// The SQL a run settled on for one turn (corrected when a corrector pass
// ran, extracted otherwise). Empty sql marks an unanswered turn.
struct PredictedTurn {
    std::string interaction_id;
    int turn_position = 0;
    std::string sql;
};

struct ScoreOptions {
    std::chrono::milliseconds timeout = std::chrono::seconds(30);
    bool column_permutation_tolerant = false;
    double epsilon = 0.0;
};

// Executes gold and predicted SQL for every dataset turn. Ordered comparison
// is used exactly when the gold query has a top-level ORDER BY. Turns with
// no prediction count incorrect; a missing database marks its turns
// incorrect with a diagnostic instead of failing the run.
EvalReport score(const Dataset& dataset, const std::vector<PredictedTurn>& predictions,
                 const SchemaCatalog& catalog, const ScoreOptions& options = {});

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_per_turn_csv(const EvalReport& report, const std::filesystem::path& path);
std::string format_report_table(const EvalReport& report);

}  // namespace convsql
