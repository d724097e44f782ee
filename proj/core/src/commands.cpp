#include "convsql/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "convsql/corpus.hpp"
#include "convsql/embedding.hpp"
#include "convsql/eval.hpp"
#include "internal.hpp"
#include "json.hpp"

namespace convsql {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = detail::ascii_lower(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::int64_t n = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return n;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

void run_config_from_json(RunConfig& run, const json& j) {
    if (j.contains("style")) run.style = prompt_style_from_string(j["style"].get<std::string>());
    if (j.contains("history_mode"))
        run.history_mode = history_mode_from_string(j["history_mode"].get<std::string>());
    if (j.contains("strategy")) {
        if (j["strategy"].is_null() ||
            detail::ascii_lower(j["strategy"].get<std::string>()) == "none") {
            run.selection.reset();
        } else {
            StrategySettings sel = run.selection.value_or(StrategySettings{});
            sel.strategy = strategy_from_string(j["strategy"].get<std::string>());
            run.selection = sel;
        }
    }
    if (j.contains("k")) {
        StrategySettings sel = run.selection.value_or(StrategySettings{});
        sel.k = j["k"].get<int>();
        if (run.selection) run.selection = sel;
    }
    if (j.contains("dail_threshold")) {
        StrategySettings sel = run.selection.value_or(StrategySettings{});
        sel.dail_threshold = j["dail_threshold"].get<double>();
        if (run.selection) run.selection = sel;
    }
    if (j.contains("reviser")) run.reviser = j["reviser"].get<bool>();
    if (j.contains("reviser_with_exemplars"))
        run.reviser_with_exemplars = j["reviser_with_exemplars"].get<bool>();
    if (j.contains("with_values")) run.with_values = j["with_values"].get<bool>();
    if (j.contains("value_rows")) run.value_rows = j["value_rows"].get<int>();
    if (j.contains("budget_tokens")) run.budget_tokens = j["budget_tokens"].get<std::int64_t>();
    if (j.contains("max_shots")) run.max_shots = j["max_shots"].get<int>();
    if (j.contains("corrector"))
        run.corrector = corrector_mode_from_string(j["corrector"].get<std::string>());
    if (j.contains("verifier_max_retries"))
        run.verifier_max_retries = j["verifier_max_retries"].get<int>();
    if (j.contains("generator_model")) run.generator_model = j["generator_model"].get<std::string>();
    if (j.contains("corrector_model")) run.corrector_model = j["corrector_model"].get<std::string>();
    if (j.contains("preliminary_model"))
        run.preliminary_model = j["preliminary_model"].get<std::string>();
    if (j.contains("max_output_tokens")) run.max_output_tokens = j["max_output_tokens"].get<int>();
    if (j.contains("temperature")) run.temperature = j["temperature"].get<double>();
    if (j.contains("seed")) run.seed = j["seed"].get<std::uint64_t>();
}

ordered_json run_config_to_json(const RunConfig& run) {
    ordered_json j;
    j["style"] = std::string(to_string(run.style));
    j["history_mode"] = std::string(to_string(run.history_mode));
    if (run.selection) {
        j["strategy"] = std::string(to_string(run.selection->strategy));
        j["k"] = run.selection->k;
        j["dail_threshold"] = run.selection->dail_threshold;
    } else {
        j["strategy"] = nullptr;
    }
    j["reviser"] = run.reviser;
    j["reviser_with_exemplars"] = run.reviser_with_exemplars;
    j["with_values"] = run.with_values;
    j["value_rows"] = run.value_rows;
    j["budget_tokens"] = run.budget_tokens;
    j["max_shots"] = run.max_shots;
    j["corrector"] = std::string(to_string(run.corrector));
    j["verifier_max_retries"] = run.verifier_max_retries;
    j["generator_model"] = run.generator_model;
    j["corrector_model"] = run.corrector_model;
    j["preliminary_model"] = run.preliminary_model;
    j["max_output_tokens"] = run.max_output_tokens;
    j["temperature"] = run.temperature;
    j["seed"] = run.seed;
    return j;
}

void reject_credentials(const json& j, const std::string& where) {
    if (!j.is_object()) return;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string key = detail::ascii_lower(it.key());
        if (key == "api_key" || key == "apikey" || key == "api_token" || key == "secret")
            throw ConfigError(where + ": credentials belong in environment variables, not config "
                              "files (offending key: " + it.key() + ")");
        reject_credentials(it.value(), where);
    }
}

}  // namespace

ExperimentSpec load_spec(const std::filesystem::path& config_file) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file: " + config_file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config " + config_file.string() + ": " + e.what());
    }
    reject_credentials(j, config_file.string());

    ExperimentSpec spec;
    auto path_of = [&](const char* key, std::filesystem::path& target) {
        if (j.contains(key)) target = j[key].get<std::string>();
    };
    path_of("dataset", spec.dataset);
    path_of("tables", spec.tables);
    path_of("db_dir", spec.db_dir);
    path_of("train_dataset", spec.train_dataset);
    path_of("cache_dir", spec.cache_dir);
    path_of("out_dir", spec.out_dir);
    path_of("mock_script", spec.mock_script);
    if (j.contains("base_url")) spec.base_url = j["base_url"].get<std::string>();
    if (j.contains("api_key_env")) spec.api_key_env = j["api_key_env"].get<std::string>();
    if (j.contains("embedding_model")) spec.embedding_model = j["embedding_model"].get<std::string>();
    if (j.contains("embedding_provider"))
        spec.embedding_provider = j["embedding_provider"].get<std::string>();
    if (j.contains("workers")) spec.workers = j["workers"].get<int>();
    if (j.contains("sample_rows")) spec.sample_rows = j["sample_rows"].get<int>();
    if (j.contains("run")) run_config_from_json(spec.run, j["run"]);
    return spec;
}

void apply_overrides(ExperimentSpec& spec, const std::map<std::string, std::string>& overrides) {
    for (const auto& [key, value] : overrides) {
        if (key == "dataset") spec.dataset = value;
        else if (key == "tables") spec.tables = value;
        else if (key == "db_dir") spec.db_dir = value;
        else if (key == "train_dataset") spec.train_dataset = value;
        else if (key == "cache_dir") spec.cache_dir = value;
        else if (key == "out_dir") spec.out_dir = value;
        else if (key == "base_url") spec.base_url = value;
        else if (key == "api_key_env") spec.api_key_env = value;
        else if (key == "embedding_model") spec.embedding_model = value;
        else if (key == "embedding_provider") spec.embedding_provider = value;
        else if (key == "mock_script") spec.mock_script = value;
        else if (key == "workers") spec.workers = static_cast<int>(parse_int(key, value));
        else if (key == "sample_rows") spec.sample_rows = static_cast<int>(parse_int(key, value));
        else if (key == "run.style") spec.run.style = prompt_style_from_string(value);
        else if (key == "run.history_mode")
            spec.run.history_mode = history_mode_from_string(value);
        else if (key == "run.strategy") {
            if (detail::ascii_lower(value) == "none") {
                spec.run.selection.reset();
            } else {
                StrategySettings sel = spec.run.selection.value_or(StrategySettings{});
                sel.strategy = strategy_from_string(value);
                spec.run.selection = sel;
            }
        } else if (key == "run.k") {
            StrategySettings sel = spec.run.selection.value_or(StrategySettings{});
            sel.k = static_cast<int>(parse_int(key, value));
            spec.run.selection = sel;
        } else if (key == "run.dail_threshold") {
            StrategySettings sel = spec.run.selection.value_or(StrategySettings{});
            sel.dail_threshold = parse_double(key, value);
            spec.run.selection = sel;
        } else if (key == "run.reviser") spec.run.reviser = parse_bool(key, value);
        else if (key == "run.reviser_with_exemplars")
            spec.run.reviser_with_exemplars = parse_bool(key, value);
        else if (key == "run.with_values") spec.run.with_values = parse_bool(key, value);
        else if (key == "run.value_rows")
            spec.run.value_rows = static_cast<int>(parse_int(key, value));
        else if (key == "run.budget_tokens") spec.run.budget_tokens = parse_int(key, value);
        else if (key == "run.max_shots")
            spec.run.max_shots = static_cast<int>(parse_int(key, value));
        else if (key == "run.corrector")
            spec.run.corrector = corrector_mode_from_string(value);
        else if (key == "run.verifier_max_retries")
            spec.run.verifier_max_retries = static_cast<int>(parse_int(key, value));
        else if (key == "run.generator_model") spec.run.generator_model = value;
        else if (key == "run.corrector_model") spec.run.corrector_model = value;
        else if (key == "run.preliminary_model") spec.run.preliminary_model = value;
        else if (key == "run.max_output_tokens")
            spec.run.max_output_tokens = static_cast<int>(parse_int(key, value));
        else if (key == "run.temperature") spec.run.temperature = parse_double(key, value);
        else if (key == "run.seed")
            spec.run.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else throw ConfigError("unknown config key: " + key);
    }
}

void write_spec_snapshot(const ExperimentSpec& spec, const std::filesystem::path& path) {
    ordered_json j;
    j["dataset"] = spec.dataset.string();
    j["tables"] = spec.tables.string();
    j["db_dir"] = spec.db_dir.string();
    j["train_dataset"] = spec.train_dataset.string();
    j["cache_dir"] = spec.cache_dir.string();
    j["out_dir"] = spec.out_dir.string();
    j["base_url"] = spec.base_url;
    j["api_key_env"] = spec.api_key_env;
    j["embedding_model"] = spec.embedding_model;
    j["embedding_provider"] = spec.embedding_provider;
    j["mock_script"] = spec.mock_script.string();
    j["workers"] = spec.workers;
    j["sample_rows"] = spec.sample_rows;
    j["run"] = run_config_to_json(spec.run);
    detail::write_text_file_atomic(path, j.dump(1) + "\n");
}

namespace {

bool require_exists(const std::filesystem::path& path, const char* what, std::ostream& err) {
    if (!path.empty() && std::filesystem::exists(path)) return true;
    err << "error: " << what << " not found: "
        << (path.empty() ? std::string("(unset)") : path.string()) << "\n";
    return false;
}

void write_usage_json(const UsageLedger& ledger, const std::filesystem::path& path) {
    ordered_json models = ordered_json::object();
    for (const auto& [model, totals] : ledger.snapshot()) {
        models[model] = {{"prompt_tokens", totals.prompt_tokens},
                         {"completion_tokens", totals.completion_tokens},
                         {"requests", totals.requests},
                         {"cache_hits", totals.cache_hits}};
    }
    const UsageTotals grand = ledger.grand_totals();
    ordered_json doc;
    doc["models"] = std::move(models);
    doc["total"] = {{"prompt_tokens", grand.prompt_tokens},
                    {"completion_tokens", grand.completion_tokens},
                    {"requests", grand.requests},
                    {"cache_hits", grand.cache_hits}};
    detail::write_text_file_atomic(path, doc.dump(1) + "\n");
}

}  // namespace

int cmd_run(const ExperimentSpec& spec_in, std::ostream& out, std::ostream& err) {
    try {
        ExperimentSpec spec = spec_in;
        if (!require_exists(spec.dataset, "dataset", err)) return 1;
        if (!require_exists(spec.tables, "schema catalog", err)) return 1;
        if (!spec.db_dir.empty() && !std::filesystem::exists(spec.db_dir)) {
            err << "error: database directory not found: " << spec.db_dir.string() << "\n";
            return 1;
        }
        if (!spec.mock_script.empty() && !std::filesystem::exists(spec.mock_script)) {
            err << "error: mock script not found: " << spec.mock_script.string() << "\n";
            return 1;
        }

        if (spec.sample_rows > 0) {
            spec.run.with_values = true;
            spec.run.value_rows = spec.sample_rows;
        }

        const SchemaCatalog catalog = load_schema_catalog(spec.tables, spec.db_dir);
        const Dataset dataset = load_dataset(spec.dataset, Split::test);
        const auto problems = validate_dataset(dataset, catalog);
        if (!problems.empty()) {
            for (const auto& p : problems) err << "error: " << p << "\n";
            return 1;
        }

        std::shared_ptr<ChatTransport> transport;
        if (!spec.mock_script.empty())
            transport = MockChatTransport::from_script_file(spec.mock_script);
        else
            transport = std::make_shared<HttpChatTransport>(spec.base_url, spec.api_key_env);
        ChatClient client(transport, spec.cache_dir);

        const bool wants_pool = spec.run.selection.has_value() || spec.run.reviser_with_exemplars;
        ExemplarPool pool;
        std::unique_ptr<EmbeddingProvider> provider;
        std::unique_ptr<CachedEmbedder> embedder;
        if (wants_pool) {
            if (!require_exists(spec.train_dataset, "train dataset", err)) return 1;
            pool = build_pool(load_dataset(spec.train_dataset, Split::train));

            const bool wants_embeddings =
                spec.run.selection &&
                (spec.run.selection->strategy == Strategy::qts ||
                 spec.run.selection->strategy == Strategy::mqs ||
                 spec.run.selection->strategy == Strategy::dail);
            if (wants_embeddings) {
                const std::string kind = detail::ascii_lower(spec.embedding_provider);
                if (kind == "http")
                    provider = std::make_unique<HttpEmbeddingProvider>(
                        spec.base_url, spec.embedding_model, spec.api_key_env);
                else if (kind == "hash" || kind == "mock")
                    provider = std::make_unique<HashEmbeddingProvider>();
                else
                    throw ConfigError("unknown embedding provider: " + spec.embedding_provider);
                embedder = std::make_unique<CachedEmbedder>(
                    *provider, spec.cache_dir / "embeddings.json");
                prepare_embeddings(pool, *embedder, catalog);
                embedder->flush();
            }
        }

        Pipeline pipeline(client, catalog, spec.run, wants_pool ? &pool : nullptr,
                          embedder.get());
        const std::vector<Prediction> predictions =
            pipeline.run_dataset(dataset, spec.workers);

        std::filesystem::create_directories(spec.out_dir);
        write_predictions_jsonl(predictions, spec.out_dir / "predictions.jsonl");
        write_usage_json(client.ledger(), spec.out_dir / "usage.json");
        write_spec_snapshot(spec, spec.out_dir / "config.json");
        if (embedder) embedder->flush();

        const UsageTotals totals = client.ledger().grand_totals();
        const auto unanswered = std::count_if(
            predictions.begin(), predictions.end(),
            [](const Prediction& p) { return p.raw_response.empty(); });
        if (unanswered > 0)
            err << "warning: " << unanswered << " of " << predictions.size()
                << " turns received no model response\n";
        out << "predictions: " << (spec.out_dir / "predictions.jsonl").string() << " ("
            << predictions.size() << " turns)\n";
        out << "usage: " << totals.requests << " requests, " << totals.cache_hits
            << " cache hits, " << totals.prompt_tokens << " prompt tokens, "
            << totals.completion_tokens << " completion tokens\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_eval(const std::filesystem::path& predictions_path, const std::filesystem::path& dataset_path,
             const std::filesystem::path& tables, const std::filesystem::path& db_dir,
             const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err) {
    try {
        if (!require_exists(predictions_path, "predictions file", err)) return 1;
        if (!require_exists(dataset_path, "dataset", err)) return 1;
        if (!require_exists(tables, "schema catalog", err)) return 1;

        const Dataset dataset = load_dataset(dataset_path, Split::test);
        const SchemaCatalog catalog = load_schema_catalog(tables, db_dir);
        const std::vector<Prediction> predictions = load_predictions_jsonl(predictions_path);

        std::set<std::pair<std::string, int>> turns;
        for (const auto& interaction : dataset.interactions)
            for (const auto& turn : interaction.turns)
                turns.insert({interaction.id, turn.position});

        std::vector<PredictedTurn> scored;
        scored.reserve(predictions.size());
        bool misaligned = false;
        for (const auto& p : predictions) {
            if (!turns.count({p.interaction_id, p.turn_position})) {
                err << "error: prediction for unknown turn " << p.interaction_id << "#"
                    << p.turn_position << "\n";
                misaligned = true;
                continue;
            }
            scored.push_back({p.interaction_id, p.turn_position, p.final_sql()});
        }
        if (misaligned) return 1;

        std::set<std::pair<std::string, int>> answered;
        for (const auto& p : scored) answered.insert({p.interaction_id, p.turn_position});
        for (const auto& turn : turns)
            if (!answered.count(turn))
                err << "warning: no prediction for turn " << turn.first << "#" << turn.second
                    << "\n";

        const EvalReport report = score(dataset, scored, catalog);
        std::filesystem::create_directories(out_dir);
        write_report_json(report, out_dir / "report.json");
        write_per_turn_csv(report, out_dir / "per_turn.csv");
        out << format_report_table(report);
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_ftdata(const std::filesystem::path& records_path, const std::filesystem::path& output,
               const std::filesystem::path& tables, std::ostream& out, std::ostream& err) {
    try {
        if (!require_exists(records_path, "records file", err)) return 1;
        SchemaCatalog catalog;
        if (!tables.empty()) catalog = load_schema_catalog(tables);

        std::ifstream in(records_path);
        std::vector<FinetuneRecord> records;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                err << "error: " << records_path.filename().string() << ":" << line_no << ": "
                    << e.what() << "\n";
                return 1;
            }
            FinetuneRecord record;
            try {
                if (j.contains("schema_text")) {
                    record.schema_text = j["schema_text"].get<std::string>();
                } else if (j.contains("db_id")) {
                    const std::string db_id = j["db_id"].get<std::string>();
                    auto it = catalog.find(db_id);
                    if (it == catalog.end())
                        throw ConfigError("unknown db_id " + db_id +
                                          " (is --tables set correctly?)");
                    record.schema_text = render_schema(it->second, PromptStyle::bsp, false);
                } else {
                    throw ParseError("record needs schema_text or db_id");
                }
                record.question = j.at("question").get<std::string>();
                record.input_sql = j.at("input_sql").get<std::string>();
                record.gold_sql = j.at("gold_sql").get<std::string>();
            } catch (const std::exception& e) {
                err << "error: " << records_path.filename().string() << ":" << line_no << ": "
                    << e.what() << "\n";
                return 1;
            }
            records.push_back(std::move(record));
        }

        FinetuneBuild build;
        try {
            build = build_finetune_dataset(records);
        } catch (const ParseError& e) {
            err << "error: " << e.what() << "\n";
            return 1;
        }

        if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
        write_finetune_jsonl(build, output);
        write_finetune_job_config("gpt-3.5-turbo", 3, output,
                                  output.parent_path() / "finetune_job.json");
        out << "samples: " << build.samples.size() << " (balance "
            << build.n_passthrough << "/" << build.n_corrected << ")\n";
        out << "wrote " << output.string() << "\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
               std::ostream& err) {
    struct Line {
        std::string name, model, style, strategy, corrector;
        double ex = 0.0, ix = 0.0;
    };
    std::vector<Line> lines;

    for (const auto& dir : run_dirs) {
        const auto config_path = dir / "config.json";
        const auto report_path = dir / "report.json";
        if (!std::filesystem::exists(config_path) || !std::filesystem::exists(report_path)) {
            err << "warning: skipping " << dir.string()
                << " (needs config.json and report.json)\n";
            continue;
        }
        try {
            std::ifstream cfg_in(config_path), rep_in(report_path);
            json cfg, rep;
            cfg_in >> cfg;
            rep_in >> rep;
            Line line;
            line.name = dir.filename().string();
            if (cfg.contains("run")) {
                const json& run = cfg["run"];
                line.model = run.value("generator_model", "?");
                line.style = run.value("style", "?");
                line.strategy = run.contains("strategy") && !run["strategy"].is_null()
                                    ? run["strategy"].get<std::string>()
                                    : (run.value("reviser", false) ? "reviser" : "none");
                line.corrector = run.value("corrector", "off");
            }
            line.ex = rep.value("ex", 0.0);
            line.ix = rep.value("ix", 0.0);
            lines.push_back(std::move(line));
        } catch (const std::exception& e) {
            err << "warning: skipping " << dir.string() << ": " << e.what() << "\n";
        }
    }

    if (lines.empty()) {
        err << "error: no usable run directories\n";
        return 1;
    }

    out << std::left << std::setw(20) << "run" << std::setw(24) << "model" << std::setw(6)
        << "style" << std::setw(10) << "strategy" << std::setw(11) << "corrector" << std::right
        << std::setw(8) << "EX" << std::setw(8) << "IX" << "\n";
    out << std::string(87, '-') << "\n";
    for (const auto& line : lines) {
        out << std::left << std::setw(20) << line.name << std::setw(24) << line.model
            << std::setw(6) << line.style << std::setw(10) << line.strategy << std::setw(11)
            << line.corrector << std::right << std::fixed << std::setprecision(2) << std::setw(8)
            << line.ex << std::setw(8) << line.ix << "\n";
    }
    return 0;
}

}  // namespace convsql
