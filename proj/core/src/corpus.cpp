#include "convsql/corpus.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "internal.hpp"
#include "json.hpp"

namespace convsql {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

json parse_json_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ParseError("missing file: " + path.string());
    std::ifstream in(path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return doc;
}

}  // namespace

ColumnType column_type_from_string(std::string_view s) {
    const std::string t = detail::ascii_lower(s);
    if (t == "text") return ColumnType::text;
    if (t == "number") return ColumnType::number;
    if (t == "time") return ColumnType::time;
    if (t == "boolean") return ColumnType::boolean;
    // Dataset files carry nonuniform labels ("others", "blob", ...).
    return ColumnType::other;
}

std::string_view to_string(ColumnType t) {
    switch (t) {
        case ColumnType::text: return "text";
        case ColumnType::number: return "number";
        case ColumnType::time: return "time";
        case ColumnType::boolean: return "boolean";
        case ColumnType::other: return "other";
    }
    return "other";
}

Split split_from_string(std::string_view s) {
    if (detail::iequals_ascii(s, "train")) return Split::train;
    if (detail::iequals_ascii(s, "test") || detail::iequals_ascii(s, "dev")) return Split::test;
    throw ParseError("unknown split: " + std::string(s));
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

const ColumnSpec* TableSpec::find_column(std::string_view name) const {
    for (const auto& c : columns) {
        if (detail::iequals_ascii(c.name, name)) return &c;
    }
    return nullptr;
}

const TableSpec* DatabaseSchema::find_table(std::string_view name) const {
    for (const auto& t : tables) {
        if (detail::iequals_ascii(t.name, name)) return &t;
    }
    return nullptr;
}

std::size_t Dataset::turn_count() const {
    return std::accumulate(interactions.begin(), interactions.end(), std::size_t{0},
                           [](std::size_t acc, const Interaction& i) { return acc + i.turns.size(); });
}

Dataset load_dataset(const std::filesystem::path& path, Split split) {
    const json doc = parse_json_file(path);
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a top-level array");

    Dataset dataset;
    dataset.split = split;
    dataset.interactions.reserve(doc.size());

    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& rec = doc[i];
        const std::string where = path.filename().string() + " interaction " + std::to_string(i);
        if (!rec.is_object()) throw ParseError(where + ": expected an object");

        Interaction interaction;
        if (rec.contains("id") && rec["id"].is_string()) {
            interaction.id = rec["id"].get<std::string>();
        } else {
            std::ostringstream id;
            id << to_string(split) << "-" << std::setw(4) << std::setfill('0') << i;
            interaction.id = id.str();
        }
        if (!rec.contains("database_id") || !rec["database_id"].is_string())
            throw ParseError(where + ": missing database_id");
        interaction.db_id = rec["database_id"].get<std::string>();

        if (!rec.contains("interaction") || !rec["interaction"].is_array())
            throw ParseError(where + ": missing interaction turns");
        const json& turns = rec["interaction"];
        if (turns.empty()) throw ParseError(where + ": empty turn list");

        int position = 1;
        for (const json& t : turns) {
            if (!t.is_object() || !t.contains("utterance") || !t.contains("query"))
                throw ParseError(where + ": turn " + std::to_string(position) +
                                 " lacks utterance/query");
            Turn turn;
            turn.position = position++;
            turn.question = t["utterance"].get<std::string>();
            turn.gold_sql = t["query"].get<std::string>();
            if (turn.question.empty())
                throw ParseError(where + ": turn " + std::to_string(turn.position) +
                                 " has an empty question");
            if (turn.gold_sql.empty())
                throw ParseError(where + ": turn " + std::to_string(turn.position) +
                                 " has an empty query");
            interaction.turns.push_back(std::move(turn));
        }
        dataset.interactions.push_back(std::move(interaction));
    }

    std::set<std::string> ids;
    for (const auto& it : dataset.interactions) {
        if (!ids.insert(it.id).second)
            throw ParseError(path.string() + ": duplicate interaction id " + it.id);
    }
    return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    ordered_json doc = ordered_json::array();
    for (const auto& interaction : dataset.interactions) {
        ordered_json rec;
        rec["id"] = interaction.id;
        rec["database_id"] = interaction.db_id;
        ordered_json turns = ordered_json::array();
        for (const auto& turn : interaction.turns) {
            turns.push_back({{"utterance", turn.question}, {"query", turn.gold_sql}});
        }
        rec["interaction"] = std::move(turns);
        doc.push_back(std::move(rec));
    }
    detail::write_text_file_atomic(path, doc.dump(1) + "\n");
}

namespace {

std::vector<std::string> string_list(const json& j, const char* primary, const char* fallback) {
    const json* src = nullptr;
    if (j.contains(primary) && j[primary].is_array()) src = &j[primary];
    else if (fallback && j.contains(fallback) && j[fallback].is_array()) src = &j[fallback];
    if (!src) return {};
    std::vector<std::string> out;
    out.reserve(src->size());
    for (const auto& v : *src) out.push_back(v.get<std::string>());
    return out;
}

}  // namespace

SchemaCatalog load_schema_catalog(const std::filesystem::path& path,
                                  const std::filesystem::path& db_dir) {
    const json doc = parse_json_file(path);
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a top-level array");

    SchemaCatalog catalog;
    for (const json& rec : doc) {
        DatabaseSchema schema;
        schema.db_id = rec.at("db_id").get<std::string>();
        if (schema.db_id.empty()) throw ParseError(path.string() + ": empty db_id");
        if (catalog.count(schema.db_id))
            throw ParseError(path.string() + ": duplicate db_id " + schema.db_id);

        const auto table_names = string_list(rec, "table_names_original", "table_names");
        for (const auto& name : table_names) schema.tables.push_back(TableSpec{name, {}, {}});

        // column_names_original: [[table_index, name], ...]; entry 0 is [-1, "*"].
        const json* cols = nullptr;
        if (rec.contains("column_names_original")) cols = &rec["column_names_original"];
        else if (rec.contains("column_names")) cols = &rec["column_names"];
        if (!cols || !cols->is_array())
            throw ParseError(path.string() + ": " + schema.db_id + " lacks column names");

        std::vector<std::string> types;
        if (rec.contains("column_types")) types = rec["column_types"].get<std::vector<std::string>>();

        // Original (catalog-file) column index -> (table index, column index).
        std::vector<std::pair<int, int>> column_slots;
        for (std::size_t ci = 0; ci < cols->size(); ++ci) {
            const json& entry = (*cols)[ci];
            const int table_index = entry.at(0).get<int>();
            const std::string col_name = entry.at(1).get<std::string>();
            if (table_index < 0) {
                column_slots.emplace_back(-1, -1);  // the "*" pseudo-column
                continue;
            }
            if (table_index >= static_cast<int>(schema.tables.size()))
                throw ParseError(path.string() + ": " + schema.db_id + " column " + col_name +
                                 " references table index " + std::to_string(table_index));
            ColumnSpec col;
            col.name = col_name;
            col.type = ci < types.size() ? column_type_from_string(types[ci]) : ColumnType::other;
            auto& table = schema.tables[static_cast<std::size_t>(table_index)];
            column_slots.emplace_back(table_index, static_cast<int>(table.columns.size()));
            table.columns.push_back(std::move(col));
        }

        auto column_at = [&](int original_index) -> ColumnSpec* {
            if (original_index < 0 || original_index >= static_cast<int>(column_slots.size()))
                return nullptr;
            auto [ti, ci] = column_slots[static_cast<std::size_t>(original_index)];
            if (ti < 0) return nullptr;
            return &schema.tables[static_cast<std::size_t>(ti)]
                        .columns[static_cast<std::size_t>(ci)];
        };
        auto owner_table = [&](int original_index) -> int {
            if (original_index < 0 || original_index >= static_cast<int>(column_slots.size()))
                return -1;
            return column_slots[static_cast<std::size_t>(original_index)].first;
        };

        if (rec.contains("primary_keys")) {
            for (const auto& pk : rec["primary_keys"]) {
                // Some catalogs use composite keys expressed as nested arrays.
                if (pk.is_array()) {
                    for (const auto& sub : pk)
                        if (auto* c = column_at(sub.get<int>())) c->is_primary_key = true;
                } else if (auto* c = column_at(pk.get<int>())) {
                    c->is_primary_key = true;
                }
            }
        }

        if (rec.contains("foreign_keys")) {
            for (const auto& fk : rec["foreign_keys"]) {
                const int from = fk.at(0).get<int>();
                const int to = fk.at(1).get<int>();
                ColumnSpec* from_col = column_at(from);
                ColumnSpec* to_col = column_at(to);
                const int to_table = owner_table(to);
                if (!from_col || !to_col || to_table < 0)
                    throw ParseError(path.string() + ": " + schema.db_id +
                                     " has a foreign key on invalid column indices");
                from_col->foreign_key =
                    ForeignKeyRef{schema.tables[static_cast<std::size_t>(to_table)].name,
                                  to_col->name};
            }
        }

        // FK references must resolve inside the schema.
        for (const auto& table : schema.tables) {
            std::set<std::string> seen;
            for (const auto& col : table.columns) {
                if (!seen.insert(detail::ascii_lower(col.name)).second)
                    throw ParseError(path.string() + ": " + schema.db_id + " table " + table.name +
                                     " repeats column " + col.name);
                if (!col.foreign_key) continue;
                const TableSpec* target = schema.find_table(col.foreign_key->table);
                if (!target || !target->find_column(col.foreign_key->column))
                    throw ParseError(path.string() + ": dangling foreign key " + table.name + "." +
                                     col.name + " -> " + col.foreign_key->table + "." +
                                     col.foreign_key->column);
            }
        }

        if (!db_dir.empty())
            schema.db_file_path = db_dir / schema.db_id / (schema.db_id + ".sqlite");
        catalog.emplace(schema.db_id, std::move(schema));
    }
    return catalog;
}

std::vector<std::string> validate_dataset(const Dataset& dataset, const SchemaCatalog& catalog) {
    std::vector<std::string> problems;
    for (const auto& interaction : dataset.interactions) {
        if (!catalog.count(interaction.db_id))
            problems.push_back("interaction " + interaction.id + ": unknown db_id " +
                               interaction.db_id);
    }
    return problems;
}

namespace {

struct SqliteDb {
    sqlite3* handle = nullptr;
    explicit SqliteDb(const std::filesystem::path& path) {
        if (sqlite3_open_v2(path.string().c_str(), &handle, SQLITE_OPEN_READONLY, nullptr) !=
            SQLITE_OK) {
            std::string msg = handle ? sqlite3_errmsg(handle) : "out of memory";
            sqlite3_close(handle);
            handle = nullptr;
            throw Error("cannot open database " + path.string() + ": " + msg);
        }
    }
    ~SqliteDb() { sqlite3_close(handle); }
    SqliteDb(const SqliteDb&) = delete;
    SqliteDb& operator=(const SqliteDb&) = delete;
};

struct SqliteStmt {
    sqlite3_stmt* stmt = nullptr;
    SqliteStmt(sqlite3* db, const std::string& sql) {
        if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK) {
            throw Error(sqlite3_errmsg(db));
        }
    }
    ~SqliteStmt() { sqlite3_finalize(stmt); }
    SqliteStmt(const SqliteStmt&) = delete;
    SqliteStmt& operator=(const SqliteStmt&) = delete;
};

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

std::string quote_ident(const std::string& name) {
    std::string out = "\"";
    for (char c : name) {
        out.push_back(c);
        if (c == '"') out.push_back('"');
    }
    out.push_back('"');
    return out;
}

}  // namespace

DatabaseSchema sample_cells(const DatabaseSchema& schema, int rows_per_table, std::uint64_t seed,
                            std::vector<std::string>* warnings) {
    DatabaseSchema out = schema;
    for (auto& table : out.tables) table.sample_rows.clear();
    if (rows_per_table <= 0) return out;

    SqliteDb db(schema.db_file_path);

    for (auto& table : out.tables) {
        std::string column_list;
        for (std::size_t i = 0; i < table.columns.size(); ++i) {
            if (i) column_list += ", ";
            column_list += quote_ident(table.columns[i].name);
        }
        if (column_list.empty()) continue;

        std::vector<std::int64_t> rowids;
        try {
            SqliteStmt ids(db.handle, "SELECT rowid FROM " + quote_ident(table.name));
            while (sqlite3_step(ids.stmt) == SQLITE_ROW)
                rowids.push_back(sqlite3_column_int64(ids.stmt, 0));
        } catch (const Error& e) {
            if (warnings)
                warnings->push_back("table " + table.name + " not sampled: " + e.what());
            continue;
        }
        if (rowids.empty()) continue;

        // Per-table generator keeps one table's sample independent of the rest.
        std::mt19937_64 rng(seed ^ detail::fnv1a64(table.name));
        std::shuffle(rowids.begin(), rowids.end(), rng);
        rowids.resize(std::min<std::size_t>(rowids.size(), static_cast<std::size_t>(rows_per_table)));

        try {
            SqliteStmt fetch(db.handle, "SELECT " + column_list + " FROM " +
                                            quote_ident(table.name) + " WHERE rowid = ?");
            for (std::int64_t rowid : rowids) {
                sqlite3_reset(fetch.stmt);
                sqlite3_bind_int64(fetch.stmt, 1, rowid);
                if (sqlite3_step(fetch.stmt) != SQLITE_ROW) continue;
                Row row;
                row.reserve(table.columns.size());
                for (int c = 0; c < static_cast<int>(table.columns.size()); ++c)
                    row.push_back(column_scalar(fetch.stmt, c));
                table.sample_rows.push_back(std::move(row));
            }
        } catch (const Error& e) {
            if (warnings)
                warnings->push_back("table " + table.name + " not sampled: " + e.what());
            table.sample_rows.clear();
        }
    }
    return out;
}

}  // namespace convsql
