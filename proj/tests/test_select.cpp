#include <algorithm>
#include <random>

#include "convsql/select.hpp"
#include "convsql/sqltext.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace convsql;
using testutil::TempDir;

namespace {

ExemplarPool manual_pool(const std::vector<std::vector<double>>& question_embs,
                         const std::vector<std::vector<double>>& masked_embs,
                         const std::vector<std::string>& gold_sqls) {
    ExemplarPool pool;
    for (std::size_t i = 0; i < question_embs.size(); ++i) {
        Exemplar ex;
        ex.db_id = "dorm_1";
        ex.question = "q" + std::to_string(i);
        ex.gold_sql = i < gold_sqls.size() ? gold_sqls[i] : "SELECT 1";
        ex.question_embedding = question_embs[i];
        ex.masked_embedding = i < masked_embs.size() ? masked_embs[i] : question_embs[i];
        pool.exemplars.push_back(std::move(ex));
    }
    pool.embedding_dim = question_embs.empty() ? 0 : question_embs.front().size();
    pool.embeddings_ready = true;
    return pool;
}

std::vector<std::size_t> indices_of(const SelectionResult& result) {
    std::vector<std::size_t> out;
    for (const auto& s : result.ranked) out.push_back(s.index);
    return out;
}

}  // namespace

TEST_CASE("strategy names parse with plural aliases") {
    CHECK(strategy_from_string("random") == Strategy::random);
    CHECK(strategy_from_string("qts") == Strategy::qts);
    CHECK(strategy_from_string("QTSS") == Strategy::qts);
    CHECK(strategy_from_string("mqs") == Strategy::mqs);
    CHECK(strategy_from_string("mqss") == Strategy::mqs);
    CHECK(strategy_from_string("qrs") == Strategy::qrs);
    CHECK(strategy_from_string("qrss") == Strategy::qrs);
    CHECK(strategy_from_string("dail") == Strategy::dail);
    CHECK(strategy_from_string("dails") == Strategy::dail);
    CHECK_THROWS_AS(strategy_from_string("nearest"), ConfigError);
    for (Strategy s :
         {Strategy::random, Strategy::qts, Strategy::mqs, Strategy::qrs, Strategy::dail})
        CHECK(strategy_from_string(to_string(s)) == s);
}

TEST_CASE("build_pool flattens every turn in order") {
    const Dataset train = testutil::synthetic_dataset("dorm_1", {2, 1, 3});
    const ExemplarPool pool = build_pool(train);
    REQUIRE(pool.exemplars.size() == 6);
    CHECK_FALSE(pool.embeddings_ready);
    CHECK(pool.exemplars[0].question == "question 1");
    CHECK(pool.exemplars[1].question == "question 2");
    CHECK(pool.exemplars[2].question == "question 1");  // interaction 1 turn 1
    CHECK(pool.exemplars[0].db_id == "dorm_1");
    CHECK(pool.exemplars[0].gold_sql == "SELECT x FROM t");
    CHECK_FALSE(pool.exemplars[0].question_embedding.has_value());
}

TEST_CASE("mask_schema_mentions replaces exact schema names only") {
    const DatabaseSchema schema = testutil::student_dorm_schema();
    CHECK(mask_schema_mentions("Show StuID and dorm_name.", schema) == "Show <MSK> and <MSK>.");
    CHECK(mask_schema_mentions("how many STUDENT rows", schema) == "how many <MSK> rows");
    // Plurals and substrings are not schema names.
    CHECK(mask_schema_mentions("How many students are there?", schema) ==
          "How many students are there?");
    // Surrounding punctuation is preserved around the mask.
    CHECK(mask_schema_mentions("count (student) now", schema) == "count (<MSK>) now");
    CHECK(mask_schema_mentions("'dorm'?", schema) == "'<MSK>'?");
    // Whitespace shape is kept.
    CHECK(mask_schema_mentions("a  student", schema) == "a  <MSK>");
    CHECK(mask_schema_mentions("", schema).empty());
}

TEST_CASE("mask_schema_mentions leaves multi-byte words intact") {
    const DatabaseSchema schema = testutil::student_dorm_schema();
    // Arabic words are not ASCII schema names; the mentioned table still masks.
    const std::string q = "كم عدد student ؟";
    CHECK(mask_schema_mentions(q, schema) == "كم عدد <MSK> ؟");
}

TEST_CASE("cosine similarity on known vectors") {
    CHECK(cosine({1, 0}, {1, 0}) == doctest::Approx(1.0));
    CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine({1, 2}, {2, 4}) == doctest::Approx(1.0));
    CHECK(cosine({1, 0}, {-1, 0}) == doctest::Approx(-1.0));
    CHECK(cosine({3, 4}, {4, 3}) == doctest::Approx(24.0 / 25.0));
    CHECK_THROWS_AS(cosine({1, 0}, {1, 0, 0}), Error);
    CHECK_THROWS_AS(cosine({0, 0}, {1, 0}), Error);
    CHECK_THROWS_AS(cosine({1, 0}, {0, 0}), Error);
}

TEST_CASE("random selection is seeded, uniform-free and degenerate-safe") {
    const ExemplarPool pool = manual_pool({{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 2}}, {}, {});

    const SelectionResult a = select_random(pool, 3, 99);
    const SelectionResult b = select_random(pool, 3, 99);
    REQUIRE(a.ranked.size() == 3);
    CHECK(indices_of(a) == indices_of(b));
    CHECK(a.strategy == Strategy::random);
    for (const auto& s : a.ranked) {
        CHECK(s.score == 0.0);
        CHECK(s.index < pool.exemplars.size());
    }
    // Indices are distinct.
    auto idx = indices_of(a);
    std::sort(idx.begin(), idx.end());
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());

    CHECK(select_random(pool, 0, 1).ranked.empty());
    CHECK(select_random(pool, -2, 1).ranked.empty());
    CHECK(select_random(ExemplarPool{}, 3, 1).ranked.empty());
    CHECK(select_random(pool, 10, 7).ranked.size() == pool.exemplars.size());
}

TEST_CASE("qts ranks by question-embedding cosine, ties to the lower index") {
    const ExemplarPool pool = manual_pool(
        {{0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}, {1.0, 0.0}}, {}, {});
    const std::vector<double> target{1.0, 0.0};

    const SelectionResult r = select_qts(pool, target, 4);
    REQUIRE(r.ranked.size() == 4);
    // cos: e1 = 1, e3 = 1 (tie, lower index first), e2 = 0.707..., e0 = 0.
    CHECK(indices_of(r) == std::vector<std::size_t>{1, 3, 2, 0});
    CHECK(r.ranked[0].score == doctest::Approx(1.0));
    CHECK(r.ranked[2].score == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(r.ranked[3].score == doctest::Approx(0.0));

    CHECK(select_qts(pool, target, 2).ranked.size() == 2);
    CHECK(indices_of(select_qts(pool, target, 2)) == std::vector<std::size_t>{1, 3});
    CHECK(select_qts(pool, target, 0).ranked.empty());

    ExemplarPool not_ready = pool;
    not_ready.embeddings_ready = false;
    CHECK_THROWS_AS(select_qts(not_ready, target, 2), Error);
}

TEST_CASE("mqs ranks by masked-embedding cosine") {
    // Question embeddings would give the opposite order; mqs must use masked.
    const ExemplarPool pool = manual_pool({{1.0, 0.0}, {0.0, 1.0}},
                                          {{0.0, 1.0}, {1.0, 0.0}}, {});
    const SelectionResult r = select_mqs(pool, {1.0, 0.0}, 2);
    CHECK(indices_of(r) == std::vector<std::size_t>{1, 0});
    const SelectionResult q = select_qts(pool, {1.0, 0.0}, 2);
    CHECK(indices_of(q) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("qrs ranks by SQL-syntax Jaccard against the preliminary prediction") {
    const ExemplarPool pool = manual_pool(
        {{1, 0}, {1, 0}, {1, 0}}, {},
        {"SELECT count(*) FROM student",               // {SELECT, COUNT, FROM}
         "SELECT Fname FROM student WHERE age > 20",   // {SELECT, FROM, WHERE, >}
         "SELECT a FROM t ORDER BY a"});               // {SELECT, FROM, ORDER BY}
    const std::string predicted = "SELECT name FROM t WHERE id > 5";

    const SelectionResult r = select_qrs(pool, predicted, 3);
    REQUIRE(r.ranked.size() == 3);
    CHECK(indices_of(r) == std::vector<std::size_t>{1, 0, 2});  // 1.0, then 0.4 tie by index
    CHECK(r.ranked[0].score == doctest::Approx(1.0));
    CHECK(r.ranked[1].score == doctest::Approx(2.0 / 5.0));
    CHECK(r.ranked[2].score == doctest::Approx(2.0 / 5.0));

    // Oracle recomputed with the public jaccard/syntax_set pieces.
    for (const auto& scored : r.ranked) {
        const double expected =
            jaccard(syntax_set(predicted), syntax_set(pool.exemplars[scored.index].gold_sql));
        CHECK(scored.score == doctest::Approx(expected));
    }

    // qrs needs no embeddings at all.
    ExemplarPool raw = pool;
    raw.embeddings_ready = false;
    CHECK(indices_of(select_qrs(raw, predicted, 3)) == std::vector<std::size_t>{1, 0, 2});
}

TEST_CASE("dail filters by masked cosine then re-ranks by Jaccard") {
    const std::string predicted = "SELECT name FROM t WHERE id > 5";
    const ExemplarPool pool = manual_pool(
        {{1, 0}, {1, 0}},
        {{1.0, 0.0},                                     // cos 1.0 vs target
         {0.0, 1.0}},                                    // cos 0.0
        {"SELECT a FROM t",                              // jaccard 0.5
         "SELECT Fname FROM student WHERE age > 20"});   // jaccard 1.0
    const std::vector<double> target{1.0, 0.0};

    SUBCASE("the similarity gate really filters") {
        const SelectionResult r = select_dail(pool, target, predicted, 2, 0.5);
        REQUIRE(r.ranked.size() == 1);  // the high-jaccard exemplar was filtered out
        CHECK(r.ranked[0].index == 0);
        CHECK(r.ranked[0].score == doctest::Approx(0.5));
    }
    SUBCASE("threshold zero admits everything: same ranking as qrs") {
        const SelectionResult r = select_dail(pool, target, predicted, 2, 0.0);
        CHECK(indices_of(r) == indices_of(select_qrs(pool, predicted, 2)));
        CHECK(indices_of(r) == std::vector<std::size_t>{1, 0});
    }
    SUBCASE("threshold above one admits nothing") {
        CHECK(select_dail(pool, target, predicted, 2, 1.0001).ranked.empty());
    }
    SUBCASE("survivor set grows as the threshold drops") {
        std::size_t prev = 0;
        for (double threshold : {1.0001, 0.5, 0.0, -1.0}) {
            const auto n = select_dail(pool, target, predicted, 10, threshold).ranked.size();
            CHECK(n >= prev);
            prev = n;
        }
    }
}

TEST_CASE("embedding rankings agree with a plain-loop oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> coord(0.05, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + rng() % 18;
        std::vector<std::vector<double>> embs(n, std::vector<double>(8));
        for (auto& v : embs)
            for (auto& x : v) x = coord(rng);
        std::vector<double> target(8);
        for (auto& x : target) x = coord(rng);

        const ExemplarPool pool = manual_pool(embs, {}, {});
        const int k = 1 + static_cast<int>(rng() % n);
        const SelectionResult got = select_qts(pool, target, k);

        // Oracle: naive cosine + stable sort on descending score.
        std::vector<ScoredExemplar> expected;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0, nu = 0, nv = 0;
            for (std::size_t d = 0; d < 8; ++d) {
                dot += target[d] * embs[i][d];
                nu += target[d] * target[d];
                nv += embs[i][d] * embs[i][d];
            }
            expected.push_back({i, dot / std::sqrt(nu * nv)});
        }
        std::stable_sort(expected.begin(), expected.end(),
                         [](const ScoredExemplar& a, const ScoredExemplar& b) {
                             return a.score > b.score;
                         });
        expected.resize(static_cast<std::size_t>(k));

        REQUIRE(got.ranked.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(got.ranked[i].index == expected[i].index);
            CHECK(got.ranked[i].score == doctest::Approx(expected[i].score));
        }
    }
}

TEST_CASE("prepare_embeddings fills raw and masked vectors through the cache") {
    SchemaCatalog catalog;
    catalog.emplace("dorm_1", testutil::student_dorm_schema());

    Dataset train = testutil::synthetic_dataset("dorm_1", {2, 2});
    train.interactions[0].turns[0].question = "Count the student rows.";
    train.interactions[0].turns[1].question = "List every dorm.";
    train.interactions[1].turns[0].question = "Count the student rows.";  // duplicate on purpose
    train.interactions[1].turns[1].question = "Who lives where?";

    ExemplarPool pool = build_pool(train);
    MockEmbeddingProvider provider(3);
    provider.set_fallback([](const std::string& text) {
        return std::vector<double>{1.0, static_cast<double>(text.size()), 2.0};
    });
    CachedEmbedder embedder(provider);

    prepare_embeddings(pool, embedder, catalog);
    CHECK(pool.embeddings_ready);
    CHECK(pool.embedding_dim == 3);
    for (const auto& ex : pool.exemplars) {
        REQUIRE(ex.question_embedding.has_value());
        REQUIRE(ex.masked_embedding.has_value());
        CHECK(ex.question_embedding->size() == 3);
    }
    // Masked text differs from the raw question when a schema name appears.
    CHECK((*pool.exemplars[0].masked_embedding)[1] ==
          doctest::Approx(static_cast<double>(
              mask_schema_mentions("Count the student rows.",
                                   catalog.at("dorm_1")).size())));
    CHECK((*pool.exemplars[3].masked_embedding) == (*pool.exemplars[3].question_embedding));

    // One batched provider call; duplicates and mask-equal texts deduplicated.
    CHECK(provider.request_count() == 1);
    const auto first_round = provider.texts_embedded();
    CHECK(first_round < 8);  // 4 raw + 4 masked, minus duplicates

    // A second pass is fully served from the cache.
    ExemplarPool again = build_pool(train);
    prepare_embeddings(again, embedder, catalog);
    CHECK(provider.request_count() == 1);
    CHECK(provider.texts_embedded() == first_round);

    // Unknown databases are rejected.
    ExemplarPool stray = build_pool(train);
    stray.exemplars[0].db_id = "missing";
    CHECK_THROWS_AS(prepare_embeddings(stray, embedder, catalog), Error);

    // Empty pools become ready without touching the provider.
    ExemplarPool empty;
    prepare_embeddings(empty, embedder, catalog);
    CHECK(empty.embeddings_ready);
    CHECK(provider.request_count() == 1);
}

TEST_CASE("cached embedder deduplicates and persists across instances") {
    TempDir dir;
    const auto cache_file = dir / "emb.json";

    MockEmbeddingProvider provider(2);
    provider.set_fallback([](const std::string& text) {
        return std::vector<double>{static_cast<double>(text.size()), 1.0};
    });

    {
        CachedEmbedder embedder(provider, cache_file);
        const auto out = embedder.embed({"alpha", "beta", "alpha", "alpha"});
        REQUIRE(out.size() == 4);
        CHECK(out[0] == out[2]);
        CHECK(out[0] == out[3]);
        CHECK(out[0] != out[1]);
        CHECK(provider.texts_embedded() == 2);  // only the unique texts
        embedder.flush();
    }
    CHECK(std::filesystem::exists(cache_file));

    MockEmbeddingProvider cold(2);  // no fallback: any request would throw
    CachedEmbedder warm(cold, cache_file);
    const auto out = warm.embed({"beta", "alpha"});
    CHECK(out[0] == std::vector<double>{4.0, 1.0});
    CHECK(out[1] == std::vector<double>{5.0, 1.0});
    CHECK(cold.request_count() == 0);
}

TEST_CASE("cached embedder survives a corrupt cache file") {
    TempDir dir;
    const auto cache_file = dir / "emb.json";
    testutil::write_file(cache_file, "this is not JSON {{{");

    MockEmbeddingProvider provider(2);
    provider.set_fallback([](const std::string&) { return std::vector<double>{1.0, 0.0}; });
    CachedEmbedder embedder(provider, cache_file);
    CHECK(embedder.embed({"x"}).size() == 1);
    CHECK(provider.request_count() == 1);
}

TEST_CASE("hash embeddings are deterministic unit vectors") {
    HashEmbeddingProvider provider(16);
    const auto out = provider.embed_batch({"alpha", "beta", "alpha"});
    REQUIRE(out.size() == 3);
    CHECK(out[0] == out[2]);
    CHECK(out[0] != out[1]);
    double norm = 0;
    for (double x : out[0]) norm += x * x;
    CHECK(norm == doctest::Approx(1.0));
    CHECK_THROWS_AS(HashEmbeddingProvider(0), ConfigError);
}

TEST_CASE("select_exemplars dispatches and enforces the embedder requirement") {
    SchemaCatalog catalog;
    catalog.emplace("dorm_1", testutil::student_dorm_schema());
    Dataset train = testutil::synthetic_dataset("dorm_1", {3, 2});
    ExemplarPool pool = build_pool(train);

    HashEmbeddingProvider provider(16);
    CachedEmbedder embedder(provider);
    prepare_embeddings(pool, embedder, catalog);
    const DatabaseSchema& schema = catalog.at("dorm_1");

    SUBCASE("embedding strategies demand a provider") {
        for (Strategy s : {Strategy::qts, Strategy::mqs, Strategy::dail}) {
            CHECK_THROWS_AS(
                select_exemplars(s, pool, "How many?", schema, "SELECT 1", 2, 0.5, nullptr, 0),
                ConfigError);
        }
    }
    SUBCASE("random and qrs run without one") {
        CHECK(select_exemplars(Strategy::random, pool, "How many?", schema, "", 2, 0.5, nullptr, 7)
                  .ranked.size() == 2);
        CHECK(select_exemplars(Strategy::qrs, pool, "How many?", schema, "SELECT x FROM t", 2, 0.5,
                               nullptr, 0)
                  .ranked.size() == 2);
    }
    SUBCASE("dispatch matches the underlying strategies") {
        const auto direct =
            select_qts(pool, embedder.embed({std::string("question 1")}).front(), 3);
        const auto routed = select_exemplars(Strategy::qts, pool, "question 1", schema,
                                             "", 3, 0.5, &embedder, 0);
        CHECK(indices_of(routed) == indices_of(direct));
        CHECK(routed.strategy == Strategy::qts);

        const auto dail = select_exemplars(Strategy::dail, pool, "question 1", schema,
                                           "SELECT x FROM t", 3, -1.0, &embedder, 0);
        CHECK(dail.ranked.size() == 3);  // threshold -1 admits the whole pool
        const auto qrs = select_exemplars(Strategy::qrs, pool, "question 1", schema,
                                          "SELECT x FROM t", 3, 0.5, nullptr, 0);
        CHECK(indices_of(dail) == indices_of(qrs));
    }
}
