#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "convsql/pipeline.hpp"

namespace convsql {

// Everything one experiment needs, resolved from a JSON config file plus
// flag overrides. The resolved spec is snapshotted into the run directory.
struct ExperimentSpec {
    std::filesystem::path dataset;       // split under evaluation
    std::filesystem::path tables;        // schema catalog
    std::filesystem::path db_dir;        // sqlite files, <db_dir>/<db>/<db>.sqlite
    std::filesystem::path train_dataset; // exemplar pool source (strategies only)
    std::filesystem::path cache_dir = ".convsql-cache";
    std::filesystem::path out_dir = "run";
    RunConfig run;

    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "CONVSQL_API_KEY";
    std::string embedding_model = "text-embedding-3-small";
    // http | hash | mock (mock requires mock_script)
    std::string embedding_provider = "hash";
    std::filesystem::path mock_script;  // nonempty: scripted transport, no network
    int workers = 1;
    int sample_rows = 0;  // cell-value rows per table; 0 disables sampling
};

ExperimentSpec load_spec(const std::filesystem::path& config_file);
void apply_overrides(ExperimentSpec& spec, const std::map<std::string, std::string>& overrides);
void write_spec_snapshot(const ExperimentSpec& spec, const std::filesystem::path& path);

// run: predictions.jsonl + usage.json + config.json under spec.out_dir.
int cmd_run(const ExperimentSpec& spec, std::ostream& out, std::ostream& err);

// eval: report.json + per_turn.csv next to the predictions, table on out.
int cmd_eval(const std::filesystem::path& predictions, const std::filesystem::path& dataset,
             const std::filesystem::path& tables, const std::filesystem::path& db_dir,
             const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

// ftdata: line-delimited records -> fine-tune messages file + balance line.
int cmd_ftdata(const std::filesystem::path& records, const std::filesystem::path& output,
               const std::filesystem::path& tables, std::ostream& out, std::ostream& err);

// report: aggregates run directories (config.json + report.json) into a
// comparison grid, one row per experiment, EX/IX columns grouped by model.
int cmd_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
               std::ostream& err);

}  // namespace convsql
