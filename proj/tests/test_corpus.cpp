#include <random>
#include <set>

#include "convsql/corpus.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace convsql;
using testutil::TempDir;

TEST_CASE("column types map from dataset labels") {
    CHECK(column_type_from_string("text") == ColumnType::text);
    CHECK(column_type_from_string("TEXT") == ColumnType::text);
    CHECK(column_type_from_string("number") == ColumnType::number);
    CHECK(column_type_from_string("time") == ColumnType::time);
    CHECK(column_type_from_string("boolean") == ColumnType::boolean);
    CHECK(column_type_from_string("others") == ColumnType::other);
    CHECK(column_type_from_string("blob") == ColumnType::other);
    CHECK(to_string(ColumnType::number) == "number");
    CHECK(to_string(ColumnType::text) == "text");
}

TEST_CASE("split names") {
    CHECK(split_from_string("train") == Split::train);
    CHECK(split_from_string("test") == Split::test);
    CHECK(split_from_string("dev") == Split::test);
    CHECK_THROWS_AS(split_from_string("validation"), ParseError);
}

TEST_CASE("find_table and find_column are case-insensitive") {
    const DatabaseSchema schema = testutil::student_dorm_schema();
    REQUIRE(schema.find_table("STUDENT") != nullptr);
    CHECK(schema.find_table("STUDENT")->name == "student");
    CHECK(schema.find_table("nope") == nullptr);
    const TableSpec* student = schema.find_table("student");
    REQUIRE(student->find_column("stuid") != nullptr);
    CHECK(student->find_column("stuid")->name == "StuID");
    CHECK(student->find_column("missing") == nullptr);
}

TEST_CASE("load_dataset assigns ids and positions") {
    TempDir dir;
    const auto path = dir / "data.json";
    testutil::write_file(path,
                         R"([
  {"database_id": "dorm_1", "interaction": [
    {"utterance": "How many students are there?", "query": "SELECT count(*) FROM student"},
    {"utterance": "List their first names.", "query": "SELECT Fname FROM student"}
  ]},
  {"id": "custom-7", "database_id": "dorm_1", "interaction": [
    {"utterance": "Show dorm names.", "query": "SELECT dorm_name FROM dorm"}
  ]}
])");
    const Dataset dataset = load_dataset(path, Split::test);
    REQUIRE(dataset.interactions.size() == 2);
    CHECK(dataset.interactions[0].id == "test-0000");
    CHECK(dataset.interactions[1].id == "custom-7");
    CHECK(dataset.interactions[0].db_id == "dorm_1");
    REQUIRE(dataset.interactions[0].turns.size() == 2);
    CHECK(dataset.interactions[0].turns[0].position == 1);
    CHECK(dataset.interactions[0].turns[1].position == 2);
    CHECK(dataset.interactions[0].turns[1].question == "List their first names.");
    CHECK(dataset.interactions[0].turns[1].gold_sql == "SELECT Fname FROM student");
    CHECK(dataset.turn_count() == 3);
}

TEST_CASE("load_dataset rejects malformed input") {
    TempDir dir;
    const auto path = dir / "bad.json";

    SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(dir / "nope.json", Split::test), ParseError); }
    SUBCASE("not an array") {
        testutil::write_file(path, "{}");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("invalid JSON") {
        testutil::write_file(path, "[{");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("missing database_id") {
        testutil::write_file(path, R"([{"interaction": [{"utterance": "q", "query": "s"}]}])");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("empty turn list") {
        testutil::write_file(path, R"([{"database_id": "d", "interaction": []}])");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("turn without query") {
        testutil::write_file(path, R"([{"database_id": "d", "interaction": [{"utterance": "q"}]}])");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("empty question") {
        testutil::write_file(path,
                             R"([{"database_id": "d", "interaction": [{"utterance": "", "query": "s"}]}])");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
    SUBCASE("duplicate ids") {
        testutil::write_file(
            path,
            R"([{"id": "x", "database_id": "d", "interaction": [{"utterance": "q", "query": "s"}]},
                {"id": "x", "database_id": "d", "interaction": [{"utterance": "q", "query": "s"}]}])");
        CHECK_THROWS_AS(load_dataset(path, Split::test), ParseError);
    }
}

TEST_CASE("dataset save/load round-trip preserves every field") {
    // Property check over randomly shaped datasets; the oracle is the
    // in-memory structure we started from.
    std::mt19937_64 rng(20240817);
    TempDir dir;
    for (int trial = 0; trial < 10; ++trial) {
        Dataset original;
        original.split = trial % 2 ? Split::train : Split::test;
        const int n = 1 + static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
            Interaction interaction;
            interaction.id = "r" + std::to_string(trial) + "-" + std::to_string(i);
            interaction.db_id = "db_" + std::to_string(rng() % 3);
            const int turns = 1 + static_cast<int>(rng() % 4);
            for (int t = 1; t <= turns; ++t) {
                interaction.turns.push_back({t, "question " + std::to_string(rng() % 100),
                                             "SELECT c" + std::to_string(rng() % 9) + " FROM t"});
            }
            original.interactions.push_back(std::move(interaction));
        }

        const auto path = dir / ("round" + std::to_string(trial) + ".json");
        save_dataset(original, path);
        const Dataset reloaded = load_dataset(path, original.split);

        REQUIRE(reloaded.interactions.size() == original.interactions.size());
        for (std::size_t i = 0; i < original.interactions.size(); ++i) {
            const auto& a = original.interactions[i];
            const auto& b = reloaded.interactions[i];
            CHECK(a.id == b.id);
            CHECK(a.db_id == b.db_id);
            REQUIRE(a.turns.size() == b.turns.size());
            for (std::size_t t = 0; t < a.turns.size(); ++t) {
                CHECK(a.turns[t].position == b.turns[t].position);
                CHECK(a.turns[t].question == b.turns[t].question);
                CHECK(a.turns[t].gold_sql == b.turns[t].gold_sql);
            }
        }
    }
}

namespace {

const char* kCatalogJson = R"([
 {
  "db_id": "dorm_1",
  "table_names_original": ["student", "dorm", "lives_in"],
  "column_names_original": [[-1, "*"], [0, "StuID"], [0, "Fname"],
                            [1, "dormid"], [1, "dorm_name"],
                            [2, "stuid"], [2, "dormid"]],
  "column_types": ["text", "number", "text", "number", "text", "number", "number"],
  "primary_keys": [1, [5, 6]],
  "foreign_keys": [[5, 1], [6, 3]]
 }
])";

}  // namespace

TEST_CASE("schema catalog resolves columns, keys and database paths") {
    TempDir dir;
    const auto path = dir / "tables.json";
    testutil::write_file(path, kCatalogJson);

    const SchemaCatalog catalog = load_schema_catalog(path, dir / "db");
    REQUIRE(catalog.size() == 1);
    const DatabaseSchema& schema = catalog.at("dorm_1");
    REQUIRE(schema.tables.size() == 3);

    const TableSpec& student = schema.tables[0];
    REQUIRE(student.columns.size() == 2);  // the [-1, "*"] entry is dropped
    CHECK(student.columns[0].name == "StuID");
    CHECK(student.columns[0].type == ColumnType::number);
    CHECK(student.columns[0].is_primary_key);
    CHECK(student.columns[1].name == "Fname");
    CHECK(student.columns[1].type == ColumnType::text);
    CHECK_FALSE(student.columns[1].is_primary_key);

    const TableSpec& lives_in = schema.tables[2];
    REQUIRE(lives_in.columns.size() == 2);
    CHECK(lives_in.columns[0].is_primary_key);  // composite key via nested array
    CHECK(lives_in.columns[1].is_primary_key);
    REQUIRE(lives_in.columns[0].foreign_key.has_value());
    CHECK(lives_in.columns[0].foreign_key->table == "student");
    CHECK(lives_in.columns[0].foreign_key->column == "StuID");
    REQUIRE(lives_in.columns[1].foreign_key.has_value());
    CHECK(lives_in.columns[1].foreign_key->table == "dorm");
    CHECK(lives_in.columns[1].foreign_key->column == "dormid");

    CHECK(schema.db_file_path == dir.path() / "db" / "dorm_1" / "dorm_1.sqlite");
}

TEST_CASE("schema catalog rejects structural errors") {
    TempDir dir;
    const auto path = dir / "tables.json";

    SUBCASE("duplicate db_id") {
        testutil::write_file(path, R"([
          {"db_id": "a", "table_names_original": ["t"],
           "column_names_original": [[-1, "*"], [0, "x"]], "column_types": ["text", "number"]},
          {"db_id": "a", "table_names_original": ["t"],
           "column_names_original": [[-1, "*"], [0, "x"]], "column_types": ["text", "number"]}
        ])");
        CHECK_THROWS_WITH_AS(load_schema_catalog(path), doctest::Contains("duplicate db_id"),
                             ParseError);
    }
    SUBCASE("column pointing at a missing table") {
        testutil::write_file(path, R"([
          {"db_id": "a", "table_names_original": ["t"],
           "column_names_original": [[-1, "*"], [4, "x"]], "column_types": ["text", "number"]}
        ])");
        CHECK_THROWS_AS(load_schema_catalog(path), ParseError);
    }
    SUBCASE("foreign key on the * slot") {
        testutil::write_file(path, R"([
          {"db_id": "a", "table_names_original": ["t"],
           "column_names_original": [[-1, "*"], [0, "x"]], "column_types": ["text", "number"],
           "foreign_keys": [[1, 0]]}
        ])");
        CHECK_THROWS_WITH_AS(load_schema_catalog(path), doctest::Contains("invalid column"),
                             ParseError);
    }
    SUBCASE("repeated column name in one table") {
        testutil::write_file(path, R"([
          {"db_id": "a", "table_names_original": ["t"],
           "column_names_original": [[-1, "*"], [0, "x"], [0, "X"]],
           "column_types": ["text", "number", "number"]}
        ])");
        CHECK_THROWS_WITH_AS(load_schema_catalog(path), doctest::Contains("repeats column"),
                             ParseError);
    }
}

TEST_CASE("validate_dataset flags unknown databases") {
    TempDir dir;
    const auto path = dir / "tables.json";
    testutil::write_file(path, testutil::single_table_catalog_json("known"));
    const SchemaCatalog catalog = load_schema_catalog(path);

    Dataset dataset = testutil::synthetic_dataset("known", {1, 2});
    CHECK(validate_dataset(dataset, catalog).empty());

    dataset.interactions[1].db_id = "mystery";
    const auto problems = validate_dataset(dataset, catalog);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("mystery") != std::string::npos);
    CHECK(problems[0].find("it-1") != std::string::npos);
}

TEST_CASE("sample_cells draws deterministic rows per seed") {
    TempDir dir;
    const auto db_path = dir / "big.sqlite";
    std::vector<std::string> stmts = {"CREATE TABLE t (x INTEGER, name TEXT)"};
    for (int i = 0; i < 50; ++i)
        stmts.push_back("INSERT INTO t VALUES (" + std::to_string(i) + ", 'row" +
                        std::to_string(i) + "')");
    testutil::make_sqlite_db(db_path, stmts);

    DatabaseSchema schema;
    schema.db_id = "big";
    schema.db_file_path = db_path;
    TableSpec t;
    t.name = "t";
    t.columns = {{"x", ColumnType::number, false, std::nullopt},
                 {"name", ColumnType::text, false, std::nullopt}};
    schema.tables = {t};

    const DatabaseSchema a = sample_cells(schema, 3, 42);
    const DatabaseSchema b = sample_cells(schema, 3, 42);
    REQUIRE(a.tables.size() == 1);
    REQUIRE(a.tables[0].sample_rows.size() == 3);
    CHECK(a.tables[0].sample_rows == b.tables[0].sample_rows);

    // Each sampled row is a genuine table row: name == "row<x>".
    for (const Row& row : a.tables[0].sample_rows) {
        REQUIRE(row.size() == 2);
        const auto x = std::get<std::int64_t>(row[0]);
        CHECK(std::get<std::string>(row[1]) == "row" + std::to_string(x));
    }

    // A different seed is allowed to (and here does) pick other rows.
    const DatabaseSchema c = sample_cells(schema, 3, 43);
    CHECK(c.tables[0].sample_rows.size() == 3);

    // Sampling never mutates the schema structure.
    CHECK(a.tables[0].columns.size() == schema.tables[0].columns.size());
    CHECK(schema.tables[0].sample_rows.empty());
}

TEST_CASE("sample_cells caps at the table size and reports missing tables") {
    TempDir dir;
    const auto db_path = dir / "tiny.sqlite";
    testutil::make_sqlite_db(db_path, {"CREATE TABLE t (x INTEGER)", "INSERT INTO t VALUES (7)"});

    DatabaseSchema schema;
    schema.db_id = "tiny";
    schema.db_file_path = db_path;
    TableSpec t;
    t.name = "t";
    t.columns = {{"x", ColumnType::number, false, std::nullopt}};
    TableSpec ghost;
    ghost.name = "ghost";
    ghost.columns = {{"y", ColumnType::number, false, std::nullopt}};
    schema.tables = {t, ghost};

    std::vector<std::string> warnings;
    const DatabaseSchema out = sample_cells(schema, 5, 1, &warnings);
    REQUIRE(out.tables[0].sample_rows.size() == 1);
    CHECK(std::get<std::int64_t>(out.tables[0].sample_rows[0][0]) == 7);
    CHECK(out.tables[1].sample_rows.empty());
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("ghost") != std::string::npos);

    // rows_per_table == 0 disables sampling entirely.
    const DatabaseSchema none = sample_cells(schema, 0, 1);
    CHECK(none.tables[0].sample_rows.empty());
}

TEST_CASE("scalar literals render like SQL") {
    CHECK(scalar_to_sql_literal(Scalar{std::monostate{}}) == "NULL");
    CHECK(scalar_to_sql_literal(Scalar{std::int64_t{42}}) == "42");
    CHECK(scalar_to_sql_literal(Scalar{3.0}) == "3");
    CHECK(scalar_to_sql_literal(Scalar{2.5}) == "2.5");
    CHECK(scalar_to_sql_literal(Scalar{std::string("it's")}) == "'it''s'");
    CHECK(is_null(Scalar{std::monostate{}}));
    CHECK_FALSE(is_null(Scalar{std::int64_t{0}}));
}
