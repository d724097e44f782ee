// convsql: context-dependent text-to-SQL experiment runner.
//
//   convsql run    --config exp.json [--set key=value ...]   execute a run
//   convsql eval   --predictions p.jsonl --dataset d.json    score a run
//   convsql ftdata --records r.jsonl --output ft.jsonl       corrector data
//   convsql report RUN_DIR...                                comparison grid

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "convsql/commands.hpp"

namespace {

// "key=value" strings from --set become override-map entries.
std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& pairs) {
    std::map<std::string, std::string> overrides;
    for (const auto& pair : pairs) {
        const std::size_t eq = pair.find('=');
        if (eq == std::string::npos || eq == 0)
            throw convsql::ConfigError("--set expects key=value, got '" + pair + "'");
        overrides[pair.substr(0, eq)] = pair.substr(eq + 1);
    }
    return overrides;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-dependent text-to-SQL experiment harness"};
    app.require_subcommand(1);

    // ---- run ----
    auto* run = app.add_subcommand("run", "execute one experiment");
    std::string run_config;
    std::vector<std::string> run_sets;
    std::string run_dataset, run_tables, run_db_dir, run_train, run_cache, run_out, run_mock;
    std::string run_style, run_strategy, run_corrector, run_model;
    int run_workers = -1, run_k = -1;
    long long run_seed = -1;
    bool run_reviser = false, run_with_values = false;
    run->add_option("--config", run_config, "experiment config file (JSON)");
    run->add_option("--set", run_sets, "override a config key (key=value, repeatable)");
    run->add_option("--dataset", run_dataset, "evaluation split (JSON)");
    run->add_option("--tables", run_tables, "schema catalog (JSON)");
    run->add_option("--db-dir", run_db_dir, "database directory");
    run->add_option("--train-dataset", run_train, "exemplar pool source (JSON)");
    run->add_option("--cache-dir", run_cache, "response cache directory");
    run->add_option("--out-dir", run_out, "run output directory");
    run->add_option("--mock-script", run_mock, "scripted transport file (offline run)");
    run->add_option("--workers", run_workers, "parallel interactions");
    run->add_option("--style", run_style, "prompt style: bsp|trp|crp|odp");
    run->add_option("--strategy", run_strategy, "exemplar selection: none|random|qts|mqs|qrs|dail");
    run->add_option("--k", run_k, "exemplar count");
    run->add_option("--corrector", run_corrector, "post-correction: off|verifier|corrector");
    run->add_option("--model", run_model, "generator model id");
    run->add_option("--seed", run_seed, "seed for random selection and cell sampling");
    run->add_flag("--reviser", run_reviser, "revision flow instead of plain generation");
    run->add_flag("--with-values", run_with_values, "append sampled cell values to schemas");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "score a predictions file");
    std::string eval_predictions, eval_dataset, eval_tables, eval_db_dir, eval_out;
    eval->add_option("--predictions", eval_predictions, "predictions.jsonl from a run")
        ->required();
    eval->add_option("--dataset", eval_dataset, "evaluation split (JSON)")->required();
    eval->add_option("--tables", eval_tables, "schema catalog (JSON)")->required();
    eval->add_option("--db-dir", eval_db_dir, "database directory");
    eval->add_option("--out-dir", eval_out, "where report.json and per_turn.csv go");

    // ---- ftdata ----
    auto* ftdata = app.add_subcommand("ftdata", "build a corrector fine-tune file");
    std::string ft_records, ft_output, ft_tables;
    ftdata->add_option("--records", ft_records, "JSONL records (schema_text|db_id, question, input_sql, gold_sql)")
        ->required();
    ftdata->add_option("--output", ft_output, "fine-tune messages file to write")->required();
    ftdata->add_option("--tables", ft_tables, "schema catalog (for db_id records)");

    // ---- report ----
    auto* report = app.add_subcommand("report", "aggregate run directories into a grid");
    std::vector<std::string> report_dirs;
    report->add_option("dirs", report_dirs, "run directories (config.json + report.json)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            convsql::ExperimentSpec spec;
            if (!run_config.empty()) spec = convsql::load_spec(run_config);

            std::map<std::string, std::string> overrides = parse_overrides(run_sets);
            if (!run_dataset.empty()) overrides["dataset"] = run_dataset;
            if (!run_tables.empty()) overrides["tables"] = run_tables;
            if (!run_db_dir.empty()) overrides["db_dir"] = run_db_dir;
            if (!run_train.empty()) overrides["train_dataset"] = run_train;
            if (!run_cache.empty()) overrides["cache_dir"] = run_cache;
            if (!run_out.empty()) overrides["out_dir"] = run_out;
            if (!run_mock.empty()) overrides["mock_script"] = run_mock;
            if (run_workers >= 0) overrides["workers"] = std::to_string(run_workers);
            if (!run_style.empty()) overrides["run.style"] = run_style;
            if (!run_strategy.empty()) overrides["run.strategy"] = run_strategy;
            if (run_k >= 0) overrides["run.k"] = std::to_string(run_k);
            if (!run_corrector.empty()) overrides["run.corrector"] = run_corrector;
            if (!run_model.empty()) overrides["run.generator_model"] = run_model;
            if (run_seed >= 0) overrides["run.seed"] = std::to_string(run_seed);
            if (run_reviser) overrides["run.reviser"] = "true";
            if (run_with_values) overrides["run.with_values"] = "true";
            convsql::apply_overrides(spec, overrides);

            return convsql::cmd_run(spec, std::cout, std::cerr);
        }
        if (*eval) {
            const std::filesystem::path predictions = eval_predictions;
            const std::filesystem::path out_dir =
                eval_out.empty() ? (predictions.has_parent_path() ? predictions.parent_path()
                                                                  : std::filesystem::path("."))
                                 : std::filesystem::path(eval_out);
            return convsql::cmd_eval(predictions, eval_dataset, eval_tables, eval_db_dir, out_dir,
                                     std::cout, std::cerr);
        }
        if (*ftdata) {
            return convsql::cmd_ftdata(ft_records, ft_output, ft_tables, std::cout, std::cerr);
        }
        if (*report) {
            std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
            return convsql::cmd_report(dirs, std::cout, std::cerr);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
