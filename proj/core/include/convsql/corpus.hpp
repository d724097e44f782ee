#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "convsql/types.hpp"

namespace convsql {

enum class ColumnType { text, number, time, boolean, other };

ColumnType column_type_from_string(std::string_view s);
std::string_view to_string(ColumnType t);

struct ForeignKeyRef {
    std::string table;
    std::string column;
    bool operator==(const ForeignKeyRef&) const = default;
};

struct ColumnSpec {
    std::string name;
    ColumnType type = ColumnType::other;
    bool is_primary_key = false;
    std::optional<ForeignKeyRef> foreign_key;
};

struct TableSpec {
    std::string name;
    std::vector<ColumnSpec> columns;
    std::vector<Row> sample_rows;  // filled by sample_cells, empty otherwise

    const ColumnSpec* find_column(std::string_view name) const;
};

struct DatabaseSchema {
    std::string db_id;
    std::vector<TableSpec> tables;
    std::filesystem::path db_file_path;

    const TableSpec* find_table(std::string_view name) const;
};

struct Turn {
    int position = 0;  // 1-based
    std::string question;
    std::string gold_sql;
};

struct Interaction {
    std::string id;
    std::string db_id;
    std::vector<Turn> turns;
};

enum class Split { train, test };

Split split_from_string(std::string_view s);
std::string_view to_string(Split s);

struct Dataset {
    Split split = Split::test;
    std::vector<Interaction> interactions;

    std::size_t turn_count() const;
};

using SchemaCatalog = std::map<std::string, DatabaseSchema>;

// One solved (question, SQL) pair from a training pool. Embeddings are
// attached by select::prepare_embeddings; their length must match the
// pool's declared dimension.
struct Exemplar {
    std::string db_id;
    std::string question;
    std::string gold_sql;
    std::optional<std::vector<double>> question_embedding;
    std::optional<std::vector<double>> masked_embedding;
};

// Loads a SParC-style dataset file: a JSON array of interactions, each with
// a database_id and an "interaction" array of {utterance, query} turns.
// Turn positions are assigned 1..n in file order; an explicit "id" field is
// honored, otherwise ids are synthesized as "<split>-<index>".
Dataset load_dataset(const std::filesystem::path& path, Split split);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Loads a SParC-style tables.json catalog. When db_dir is nonempty every
// schema's db_file_path is set to db_dir/<db_id>/<db_id>.sqlite.
// Throws ParseError on duplicate db_id or a foreign key that does not
// resolve within its schema (message names the offending table.column).
SchemaCatalog load_schema_catalog(const std::filesystem::path& path,
                                  const std::filesystem::path& db_dir = {});

// Interactions whose db_id is missing from the catalog (load defers this).
std::vector<std::string> validate_dataset(const Dataset& dataset, const SchemaCatalog& catalog);

// Returns a copy of schema whose tables carry up to rows_per_table sampled
// rows, read from db_file_path under a seeded shuffle of rowids. Tables
// missing from the database file get a warning and empty samples. Column
// structure is never altered.
DatabaseSchema sample_cells(const DatabaseSchema& schema, int rows_per_table, std::uint64_t seed,
                            std::vector<std::string>* warnings = nullptr);

}  // namespace convsql
