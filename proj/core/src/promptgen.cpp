#include "convsql/promptgen.hpp"

#include <sstream>

#include "convsql/types.hpp"
#include "internal.hpp"

namespace convsql {

PromptStyle prompt_style_from_string(std::string_view s) {
    const std::string t = detail::ascii_lower(s);
    if (t == "bsp") return PromptStyle::bsp;
    if (t == "trp") return PromptStyle::trp;
    if (t == "crp") return PromptStyle::crp;
    if (t == "odp") return PromptStyle::odp;
    throw ConfigError("unknown prompt style: " + std::string(s));
}

std::string_view to_string(PromptStyle s) {
    switch (s) {
        case PromptStyle::bsp: return "bsp";
        case PromptStyle::trp: return "trp";
        case PromptStyle::crp: return "crp";
        case PromptStyle::odp: return "odp";
    }
    return "odp";
}

HistoryMode history_mode_from_string(std::string_view s) {
    const std::string t = detail::ascii_lower(s);
    if (t == "questions_only" || t == "questions") return HistoryMode::questions_only;
    if (t == "questions_and_predicted_sql" || t == "questions_and_sql")
        return HistoryMode::questions_and_predicted_sql;
    if (t == "none") return HistoryMode::none;
    throw ConfigError("unknown history mode: " + std::string(s));
}

std::string_view to_string(HistoryMode m) {
    switch (m) {
        case HistoryMode::questions_only: return "questions_only";
        case HistoryMode::questions_and_predicted_sql: return "questions_and_predicted_sql";
        case HistoryMode::none: return "none";
    }
    return "none";
}

std::int64_t estimate_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
}

namespace {

std::string row_tuple(const Row& row) {
    std::string out = "(";
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ", ";
        out += scalar_to_sql_literal(row[i]);
    }
    out += ")";
    return out;
}

std::string values_payload(const TableSpec& table) {
    std::string out = "values: " + table.name + " = ";
    for (std::size_t i = 0; i < table.sample_rows.size(); ++i) {
        if (i) out += ", ";
        out += row_tuple(table.sample_rows[i]);
    }
    return out;
}

std::string column_list(const TableSpec& table, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out += sep;
        out += table.columns[i].name;
    }
    return out;
}

void render_crp_table(std::ostringstream& out, const TableSpec& table, bool with_values) {
    out << "CREATE TABLE " << table.name << " (\n";
    for (const auto& col : table.columns) {
        out << "     " << col.name << " " << to_string(col.type);
        if (col.is_primary_key) out << " PRIMARY KEY";
        out << ",\n";
    }
    std::vector<const ColumnSpec*> fks;
    for (const auto& col : table.columns)
        if (col.foreign_key) fks.push_back(&col);
    for (std::size_t i = 0; i < fks.size(); ++i) {
        out << "     FOREIGN KEY (" << fks[i]->name << ") REFERENCES "
            << fks[i]->foreign_key->table << " (" << fks[i]->foreign_key->column << ")";
        if (i + 1 < fks.size()) out << ",";
        out << "\n";
    }
    out << ");\n";
    if (with_values && !table.sample_rows.empty())
        out << "/* " << values_payload(table) << " */\n";
}

}  // namespace

std::string render_schema(const DatabaseSchema& schema, PromptStyle style, bool with_values) {
    std::ostringstream out;
    switch (style) {
        case PromptStyle::bsp:
        case PromptStyle::trp:
            for (const auto& table : schema.tables) {
                out << "Table " << table.name << ", columns = [" << column_list(table, ", ")
                    << "]\n";
                if (with_values && !table.sample_rows.empty())
                    out << values_payload(table) << "\n";
            }
            break;
        case PromptStyle::crp:
            for (std::size_t i = 0; i < schema.tables.size(); ++i) {
                if (i) out << "\n";
                render_crp_table(out, schema.tables[i], with_values);
            }
            break;
        case PromptStyle::odp:
            if (schema.tables.empty()) break;
            out << "#\n";
            for (const auto& table : schema.tables) {
                out << "# " << table.name << "(" << column_list(table, ", ") << ")\n";
                if (with_values && !table.sample_rows.empty())
                    out << "# " << values_payload(table) << "\n";
            }
            out << "#\n";
            break;
    }
    return out.str();
}

namespace {

// Dialogue lines for prior turns, in the style's comment convention.
std::vector<std::string> history_lines(const std::vector<HistoryItem>& history, PromptStyle style,
                                       HistoryMode mode) {
    std::vector<std::string> lines;
    if (mode == HistoryMode::none) return lines;
    const bool with_sql = mode == HistoryMode::questions_and_predicted_sql;
    for (const auto& item : history) {
        switch (style) {
            case PromptStyle::bsp:
            case PromptStyle::trp: lines.push_back(item.question); break;
            case PromptStyle::crp: lines.push_back("/* " + item.question + " */"); break;
            case PromptStyle::odp: lines.push_back("### " + item.question); break;
        }
        if (with_sql && !item.predicted_sql.empty()) lines.push_back(item.predicted_sql);
    }
    return lines;
}

std::string assemble(const DatabaseSchema& schema, const std::vector<HistoryItem>& history,
                     const std::string& question, PromptStyle style, HistoryMode mode,
                     bool with_values) {
    std::ostringstream out;
    const std::string schema_text = render_schema(schema, style, with_values);
    const std::vector<std::string> dialogue = history_lines(history, style, mode);

    switch (style) {
        case PromptStyle::bsp:
            out << schema_text << "\n";
            for (const auto& line : dialogue) out << line << "\n";
            out << question << "\n";
            break;
        case PromptStyle::trp:
            out << "Given the following database schema:\n" << schema_text << "\n";
            if (!dialogue.empty()) {
                for (const auto& line : dialogue) out << line << "\n";
                out << "\n";
            }
            out << "Answer the following question:\n" << question << "\n";
            break;
        case PromptStyle::crp:
            out << "/*Given the following database schema: */\n" << schema_text << "\n";
            for (const auto& line : dialogue) out << line << "\n";
            out << "/*Answer the following question: " << question << " */\n";
            break;
        case PromptStyle::odp:
            out << "###Complete sqlite SQL query only and with no explanation\n"
                << "### SQLite SQL tables , with their properties:\n"
                << schema_text;
            for (const auto& line : dialogue) out << line << "\n";
            out << "### " << question << "\n";
            break;
    }
    return out.str();
}

std::int64_t run_estimator(const TokenEstimator& estimator, std::string_view text) {
    return estimator ? estimator(text) : estimate_tokens(text);
}

}  // namespace

RenderedPrompt render_zero_shot(const DatabaseSchema& schema,
                                const std::vector<HistoryItem>& history,
                                const std::string& question, PromptStyle style, HistoryMode mode,
                                bool with_values, const TokenEstimator& estimator) {
    RenderedPrompt prompt;
    prompt.style = style;
    prompt.shot_count = 0;
    prompt.text = assemble(schema, history, question, style, mode, with_values);
    prompt.estimated_tokens = run_estimator(estimator, prompt.text);
    return prompt;
}

RenderedPrompt render_icl(const DatabaseSchema& schema, const std::vector<HistoryItem>& history,
                          const std::string& question, const std::vector<Exemplar>& exemplars,
                          const SchemaCatalog& catalog, PromptStyle style, HistoryMode mode,
                          bool with_values, std::int64_t budget_tokens, int max_shots,
                          const TokenEstimator& estimator) {
    const std::string target = assemble(schema, history, question, style, mode, with_values);

    std::vector<std::string> blocks;
    const int limit = std::min<int>(max_shots, static_cast<int>(exemplars.size()));
    for (int i = 0; i < limit; ++i) {
        const Exemplar& ex = exemplars[static_cast<std::size_t>(i)];
        auto it = catalog.find(ex.db_id);
        if (it == catalog.end())
            throw Error("exemplar references unknown database: " + ex.db_id);
        std::ostringstream block;
        block << "Given the following database schema:\n"
              << render_schema(it->second, PromptStyle::trp, false) << "\n"
              << "Answer the following question:\n"
              << ex.question << "\n"
              << ex.gold_sql << "\n";
        blocks.push_back(block.str());
    }

    auto compose = [&](int shots) {
        std::string text;
        for (int i = 0; i < shots; ++i) text += blocks[static_cast<std::size_t>(i)] + "\n";
        text += target;
        return text;
    };

    int shots = static_cast<int>(blocks.size());
    std::string text = compose(shots);
    while (shots > 0 && run_estimator(estimator, text) > budget_tokens) {
        --shots;
        text = compose(shots);
    }
    if (run_estimator(estimator, text) > budget_tokens)
        throw BudgetError("prompt exceeds token budget even with no exemplars (" +
                          std::to_string(run_estimator(estimator, text)) + " > " +
                          std::to_string(budget_tokens) + ")");

    RenderedPrompt prompt;
    prompt.style = style;
    prompt.shot_count = shots;
    prompt.text = std::move(text);
    prompt.estimated_tokens = run_estimator(estimator, prompt.text);
    return prompt;
}

}  // namespace convsql
