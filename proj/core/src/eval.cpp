#include "convsql/eval.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "convsql/sqltext.hpp"
#include "internal.hpp"
#include "json.hpp"

namespace convsql {

using nlohmann::ordered_json;

std::string_view to_string(ExecStatus s) {
    switch (s) {
        case ExecStatus::rows: return "rows";
        case ExecStatus::error: return "error";
        case ExecStatus::timeout: return "timeout";
    }
    return "error";
}

namespace {

struct Deadline {
    std::chrono::steady_clock::time_point at;
    bool expired = false;
};

int progress_callback(void* ctx) {
    auto* deadline = static_cast<Deadline*>(ctx);
    if (std::chrono::steady_clock::now() >= deadline->at) {
        deadline->expired = true;
        return 1;  // interrupt the statement
    }
    return 0;
}

Scalar column_scalar(sqlite3_stmt* stmt, int col) {
    switch (sqlite3_column_type(stmt, col)) {
        case SQLITE_NULL: return std::monostate{};
        case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(stmt, col));
        case SQLITE_FLOAT: return sqlite3_column_double(stmt, col);
        default: {
            const unsigned char* text = sqlite3_column_text(stmt, col);
            const int n = sqlite3_column_bytes(stmt, col);
            return std::string(reinterpret_cast<const char*>(text), static_cast<std::size_t>(n));
        }
    }
}

}  // namespace

ExecutionOutcome execute_sql(const std::filesystem::path& db_file, const std::string& sql,
                             std::chrono::milliseconds timeout) {
    ExecutionOutcome outcome;

    sqlite3* db = nullptr;
    if (sqlite3_open_v2(db_file.string().c_str(), &db, SQLITE_OPEN_READONLY, nullptr) !=
        SQLITE_OK) {
        outcome.status = ExecStatus::error;
        outcome.error_text = db ? sqlite3_errmsg(db) : "out of memory";
        sqlite3_close(db);
        return outcome;
    }

    Deadline deadline{std::chrono::steady_clock::now() + timeout};
    if (timeout.count() > 0) sqlite3_progress_handler(db, 1000, progress_callback, &deadline);

    sqlite3_stmt* stmt = nullptr;
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK) {
        outcome.status = deadline.expired ? ExecStatus::timeout : ExecStatus::error;
        outcome.error_text = sqlite3_errmsg(db);
        sqlite3_close(db);
        return outcome;
    }
    if (!stmt) {  // blank input (whitespace/comments only)
        outcome.status = ExecStatus::error;
        outcome.error_text = "empty statement";
        sqlite3_close(db);
        return outcome;
    }

    const int n_cols = sqlite3_column_count(stmt);
    int rc;
    while ((rc = sqlite3_step(stmt)) == SQLITE_ROW) {
        Row row;
        row.reserve(static_cast<std::size_t>(n_cols));
        for (int c = 0; c < n_cols; ++c) row.push_back(column_scalar(stmt, c));
        outcome.rows.push_back(std::move(row));
    }

    if (rc == SQLITE_DONE) {
        outcome.status = ExecStatus::rows;
    } else if (rc == SQLITE_INTERRUPT || deadline.expired) {
        outcome.status = ExecStatus::timeout;
        outcome.error_text = "statement timed out";
        outcome.rows.clear();
    } else {
        outcome.status = ExecStatus::error;
        outcome.error_text = sqlite3_errmsg(db);
        outcome.rows.clear();
    }
    sqlite3_finalize(stmt);
    sqlite3_close(db);
    return outcome;
}

namespace {

// Reals holding an integral value compare as integers (SQLite backends
// disagree about 3 vs 3.0 for aggregates).
Scalar normalize(const Scalar& s) {
    if (const double* d = std::get_if<double>(&s)) {
        if (std::isfinite(*d) && *d == std::floor(*d) &&
            std::abs(*d) <= 9007199254740992.0)  // 2^53: exact integer doubles
            return static_cast<std::int64_t>(*d);
    }
    return s;
}

bool scalar_equal(const Scalar& a, const Scalar& b, double epsilon) {
    const Scalar x = normalize(a);
    const Scalar y = normalize(b);
    if (epsilon > 0) {
        const bool x_num = std::holds_alternative<std::int64_t>(x) || std::holds_alternative<double>(x);
        const bool y_num = std::holds_alternative<std::int64_t>(y) || std::holds_alternative<double>(y);
        if (x_num && y_num) {
            auto val = [](const Scalar& s) {
                return std::holds_alternative<double>(s)
                           ? std::get<double>(s)
                           : static_cast<double>(std::get<std::int64_t>(s));
            };
            return std::abs(val(x) - val(y)) <= epsilon;
        }
    }
    return x == y;
}

bool row_equal(const Row& a, const Row& b, double epsilon) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!scalar_equal(a[i], b[i], epsilon)) return false;
    return true;
}

// Total order over normalized scalars: nulls, then numerics by value, then text.
int scalar_rank(const Scalar& s) {
    if (std::holds_alternative<std::monostate>(s)) return 0;
    if (std::holds_alternative<std::string>(s)) return 2;
    return 1;
}

bool scalar_less(const Scalar& a, const Scalar& b) {
    const Scalar x = normalize(a);
    const Scalar y = normalize(b);
    const int rx = scalar_rank(x), ry = scalar_rank(y);
    if (rx != ry) return rx < ry;
    switch (rx) {
        case 0: return false;
        case 1: {
            auto val = [](const Scalar& s) {
                return std::holds_alternative<double>(s)
                           ? std::get<double>(s)
                           : static_cast<double>(std::get<std::int64_t>(s));
            };
            if (val(x) != val(y)) return val(x) < val(y);
            return x.index() < y.index();
        }
        default: return std::get<std::string>(x) < std::get<std::string>(y);
    }
}

bool row_less(const Row& a, const Row& b) {
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (scalar_less(a[i], b[i])) return true;
        if (scalar_less(b[i], a[i])) return false;
    }
    return a.size() < b.size();
}

bool rows_equal(std::vector<Row> gold, std::vector<Row> pred, bool order_sensitive,
                double epsilon) {
    if (gold.size() != pred.size()) return false;
    if (!order_sensitive) {
        std::sort(gold.begin(), gold.end(), row_less);
        std::sort(pred.begin(), pred.end(), row_less);
    }
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (!row_equal(gold[i], pred[i], epsilon)) return false;
    return true;
}

std::vector<Row> permute_columns(const std::vector<Row>& rows, const std::vector<std::size_t>& perm) {
    std::vector<Row> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        Row r;
        r.reserve(perm.size());
        for (std::size_t p : perm) r.push_back(row[p]);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

bool compare_outcomes(const ExecutionOutcome& gold, const ExecutionOutcome& pred,
                      const CompareOptions& options) {
    if (gold.status != ExecStatus::rows || pred.status != ExecStatus::rows) return false;
    if (gold.rows.size() != pred.rows.size()) return false;
    if (gold.rows.empty()) return true;

    const std::size_t width = gold.rows.front().size();
    if (rows_equal(gold.rows, pred.rows, options.order_sensitive, options.epsilon)) return true;
    if (!options.column_permutation_tolerant) return false;
    if (pred.rows.front().size() != width || width > 6) return false;

    std::vector<std::size_t> perm(width);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    while (std::next_permutation(perm.begin(), perm.end())) {
        if (rows_equal(gold.rows, permute_columns(pred.rows, perm), options.order_sensitive,
                       options.epsilon))
            return true;
    }
    return false;
}

EvalReport score(const Dataset& dataset, const std::vector<PredictedTurn>& predictions,
                 const SchemaCatalog& catalog, const ScoreOptions& options) {
    std::map<std::pair<std::string, int>, std::string> by_turn;
    for (const auto& p : predictions) by_turn[{p.interaction_id, p.turn_position}] = p.sql;

    EvalReport report;
    report.n_interactions = dataset.interactions.size();

    for (const auto& interaction : dataset.interactions) {
        bool all_correct = !interaction.turns.empty();
        for (const auto& turn : interaction.turns) {
            ++report.n_questions;
            TurnResult result;
            result.interaction_id = interaction.id;
            result.turn_position = turn.position;

            auto schema_it = catalog.find(interaction.db_id);
            if (schema_it == catalog.end() || schema_it->second.db_file_path.empty() ||
                !std::filesystem::exists(schema_it->second.db_file_path)) {
                result.detail = "database not available: " + interaction.db_id;
                all_correct = false;
                report.per_turn.push_back(std::move(result));
                continue;
            }
            const auto& db_file = schema_it->second.db_file_path;

            const ExecutionOutcome gold = execute_sql(db_file, turn.gold_sql, options.timeout);
            result.gold_status = gold.status;

            auto pred_it = by_turn.find({interaction.id, turn.position});
            if (pred_it == by_turn.end() || pred_it->second.empty()) {
                result.detail = "no prediction";
                all_correct = false;
                report.per_turn.push_back(std::move(result));
                continue;
            }

            const ExecutionOutcome pred = execute_sql(db_file, pred_it->second, options.timeout);
            result.pred_status = pred.status;

            bool ordered = false;
            try {
                ordered = has_top_level_order_by(turn.gold_sql);
            } catch (const TokenizeError&) {
                ordered = false;
            }

            CompareOptions cmp;
            cmp.order_sensitive = ordered;
            cmp.column_permutation_tolerant = options.column_permutation_tolerant;
            cmp.epsilon = options.epsilon;
            result.correct = compare_outcomes(gold, pred, cmp);

            if (!result.correct) {
                if (gold.status != ExecStatus::rows)
                    result.detail = "gold " + std::string(to_string(gold.status)) + ": " +
                                    gold.error_text;
                else if (pred.status != ExecStatus::rows)
                    result.detail = "pred " + std::string(to_string(pred.status)) + ": " +
                                    pred.error_text;
                else
                    result.detail = "result mismatch";
                all_correct = false;
            } else {
                ++report.n_correct_turns;
            }
            report.per_turn.push_back(std::move(result));
        }
        if (all_correct) ++report.n_correct_interactions;
    }

    report.ex = report.n_questions == 0
                    ? 0.0
                    : 100.0 * static_cast<double>(report.n_correct_turns) /
                          static_cast<double>(report.n_questions);
    report.ix = report.n_interactions == 0
                    ? 0.0
                    : 100.0 * static_cast<double>(report.n_correct_interactions) /
                          static_cast<double>(report.n_interactions);
    return report;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    ordered_json doc;
    doc["ex"] = report.ex;
    doc["ix"] = report.ix;
    doc["n_questions"] = report.n_questions;
    doc["n_interactions"] = report.n_interactions;
    doc["n_correct_turns"] = report.n_correct_turns;
    doc["n_correct_interactions"] = report.n_correct_interactions;
    ordered_json turns = ordered_json::array();
    for (const auto& t : report.per_turn) {
        turns.push_back({{"interaction_id", t.interaction_id},
                         {"turn_position", t.turn_position},
                         {"correct", t.correct},
                         {"gold_status", std::string(to_string(t.gold_status))},
                         {"pred_status", std::string(to_string(t.pred_status))},
                         {"detail", t.detail}});
    }
    doc["per_turn"] = std::move(turns);
    detail::write_text_file_atomic(path, doc.dump(1) + "\n");
}

namespace {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        out.push_back(c);
        if (c == '"') out.push_back('"');
    }
    out.push_back('"');
    return out;
}

}  // namespace

void write_per_turn_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "interaction_id,turn_position,correct,gold_status,pred_status,detail\n";
    for (const auto& t : report.per_turn) {
        out << csv_escape(t.interaction_id) << "," << t.turn_position << ","
            << (t.correct ? 1 : 0) << "," << to_string(t.gold_status) << ","
            << to_string(t.pred_status) << "," << csv_escape(t.detail) << "\n";
    }
    detail::write_text_file_atomic(path, out.str());
}

std::string format_report_table(const EvalReport& report) {
    std::ostringstream out;
    out << std::left << std::setw(22) << "questions" << report.n_questions << "\n"
        << std::left << std::setw(22) << "interactions" << report.n_interactions << "\n"
        << std::left << std::setw(22) << "correct turns" << report.n_correct_turns << "\n"
        << std::left << std::setw(22) << "correct interactions" << report.n_correct_interactions
        << "\n"
        << std::fixed << std::setprecision(2) << std::left << std::setw(22) << "EX (%)"
        << report.ex << "\n"
        << std::left << std::setw(22) << "IX (%)" << report.ix << "\n";
    return out.str();
}

}  // namespace convsql
