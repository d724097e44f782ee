// Microbenchmarks for the hot paths of prompt rendering, SQL text analysis,
// exemplar selection and result comparison.

#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "convsql/corpus.hpp"
#include "convsql/eval.hpp"
#include "convsql/promptgen.hpp"
#include "convsql/select.hpp"
#include "convsql/sqltext.hpp"

namespace {

using namespace convsql;

DatabaseSchema student_schema() {
    DatabaseSchema schema;
    schema.db_id = "dorm_1";
    TableSpec student;
    student.name = "student";
    student.columns = {{"StuID", ColumnType::number, true, std::nullopt},
                       {"Fname", ColumnType::text, false, std::nullopt},
                       {"LName", ColumnType::text, false, std::nullopt},
                       {"Age", ColumnType::number, false, std::nullopt},
                       {"Major", ColumnType::number, false, std::nullopt}};
    TableSpec dorm;
    dorm.name = "dorm";
    dorm.columns = {{"dormid", ColumnType::number, true, std::nullopt},
                    {"dorm_name", ColumnType::text, false, std::nullopt},
                    {"student_capacity", ColumnType::number, false, std::nullopt}};
    schema.tables = {student, dorm};
    return schema;
}

const std::string kQuery =
    "SELECT T1.Fname, count(*) FROM student AS T1 JOIN dorm AS T2 ON T1.StuID = T2.dormid "
    "WHERE T1.Age > 20 GROUP BY T1.Major HAVING count(*) > 2 ORDER BY T1.Fname DESC LIMIT 5";

std::vector<HistoryItem> sample_history() {
    return {{"How many students are there?", "SELECT count(*) FROM student"},
            {"Only those older than 20.", "SELECT count(*) FROM student WHERE Age > 20"},
            {"Group them by major.", "SELECT Major, count(*) FROM student GROUP BY Major"}};
}

ExemplarPool sample_pool(std::size_t size) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coord(0.05, 1.0);
    const std::vector<std::string> bank = {
        "SELECT count(*) FROM student",
        "SELECT Fname FROM student WHERE Age > 20",
        "SELECT Major, count(*) FROM student GROUP BY Major",
        "SELECT dorm_name FROM dorm ORDER BY student_capacity DESC",
        "SELECT T1.Fname FROM student AS T1 JOIN dorm AS T2 ON T1.StuID = T2.dormid",
    };
    ExemplarPool pool;
    pool.embedding_dim = 64;
    pool.embeddings_ready = true;
    for (std::size_t i = 0; i < size; ++i) {
        Exemplar e;
        e.db_id = "dorm_1";
        e.question = "pool question " + std::to_string(i);
        e.gold_sql = bank[i % bank.size()];
        std::vector<double> emb(64);
        for (auto& x : emb) x = coord(rng);
        e.question_embedding = emb;
        e.masked_embedding = std::move(emb);
        pool.exemplars.push_back(std::move(e));
    }
    return pool;
}

ExecutionOutcome sample_rows_outcome(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ExecutionOutcome outcome;
    outcome.status = ExecStatus::rows;
    outcome.rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        outcome.rows.push_back({Scalar(static_cast<std::int64_t>(rng() % 1000)),
                                Scalar("name" + std::to_string(rng() % 100))});
    return outcome;
}

void BM_TokenizeSql(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(tokenize_sql(kQuery));
}
BENCHMARK(BM_TokenizeSql);

void BM_SyntaxSet(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(syntax_set(kQuery));
}
BENCHMARK(BM_SyntaxSet);

void BM_Jaccard(benchmark::State& state) {
    const SyntaxSet a = syntax_set(kQuery);
    const SyntaxSet b = syntax_set("SELECT Fname FROM student WHERE Age > 20 ORDER BY Fname");
    for (auto _ : state) benchmark::DoNotOptimize(jaccard(a, b));
}
BENCHMARK(BM_Jaccard);

void BM_ExtractSql(benchmark::State& state) {
    const std::string raw = "Sure, here is the query you asked for:\n```sql\n" + kQuery +
                            ";\n```\nLet me know if you need anything else.";
    for (auto _ : state) benchmark::DoNotOptimize(extract_sql(raw));
}
BENCHMARK(BM_ExtractSql);

void BM_MaskSchemaMentions(benchmark::State& state) {
    const DatabaseSchema schema = student_schema();
    const std::string question =
        "Show the Fname and LName of every student whose Age exceeds the dorm average, "
        "together with the dorm_name of their dorm.";
    for (auto _ : state) benchmark::DoNotOptimize(mask_schema_mentions(question, schema));
}
BENCHMARK(BM_MaskSchemaMentions);

void BM_RenderZeroShot(benchmark::State& state) {
    const DatabaseSchema schema = student_schema();
    const std::vector<HistoryItem> history = sample_history();
    const auto style = static_cast<PromptStyle>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(render_zero_shot(schema, history,
                                                  "Which major has the most students?", style,
                                                  HistoryMode::questions_and_predicted_sql,
                                                  false));
}
BENCHMARK(BM_RenderZeroShot)
    ->Arg(static_cast<int>(PromptStyle::bsp))
    ->Arg(static_cast<int>(PromptStyle::trp))
    ->Arg(static_cast<int>(PromptStyle::crp))
    ->Arg(static_cast<int>(PromptStyle::odp));

void BM_RenderIcl(benchmark::State& state) {
    const DatabaseSchema schema = student_schema();
    const SchemaCatalog catalog = {{"dorm_1", schema}};
    const ExemplarPool pool = sample_pool(3);
    const std::vector<HistoryItem> history = sample_history();
    for (auto _ : state)
        benchmark::DoNotOptimize(render_icl(schema, history,
                                            "Which major has the most students?",
                                            pool.exemplars, catalog, PromptStyle::odp,
                                            HistoryMode::questions_and_predicted_sql, false,
                                            4096, 3));
}
BENCHMARK(BM_RenderIcl);

void BM_Cosine(benchmark::State& state) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> coord(0.05, 1.0);
    std::vector<double> u(1536), v(1536);
    for (auto& x : u) x = coord(rng);
    for (auto& x : v) x = coord(rng);
    for (auto _ : state) benchmark::DoNotOptimize(cosine(u, v));
}
BENCHMARK(BM_Cosine);

void BM_SelectQrs(benchmark::State& state) {
    const ExemplarPool pool = sample_pool(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(select_qrs(pool, kQuery, 3));
}
BENCHMARK(BM_SelectQrs)->Arg(100)->Arg(1000);

void BM_SelectQts(benchmark::State& state) {
    const ExemplarPool pool = sample_pool(static_cast<std::size_t>(state.range(0)));
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> coord(0.05, 1.0);
    std::vector<double> target(64);
    for (auto& x : target) x = coord(rng);
    for (auto _ : state) benchmark::DoNotOptimize(select_qts(pool, target, 3));
}
BENCHMARK(BM_SelectQts)->Arg(100)->Arg(1000);

void BM_CompareOutcomesMultiset(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const ExecutionOutcome gold = sample_rows_outcome(n, 3);
    ExecutionOutcome pred = gold;
    std::mt19937_64 rng(5);
    std::shuffle(pred.rows.begin(), pred.rows.end(), rng);
    const CompareOptions options;
    for (auto _ : state) benchmark::DoNotOptimize(compare_outcomes(gold, pred, options));
}
BENCHMARK(BM_CompareOutcomesMultiset)->Arg(10)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
