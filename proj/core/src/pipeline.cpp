#include "convsql/pipeline.hpp"

#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <thread>

#include "convsql/sqltext.hpp"
#include "internal.hpp"
#include "json.hpp"

namespace convsql {

using nlohmann::json;
using nlohmann::ordered_json;

CorrectorMode corrector_mode_from_string(std::string_view s) {
    const std::string t = detail::ascii_lower(s);
    if (t == "off" || t == "none") return CorrectorMode::off;
    if (t == "verifier") return CorrectorMode::verifier;
    if (t == "corrector") return CorrectorMode::corrector;
    throw ConfigError("unknown corrector mode: " + std::string(s));
}

std::string_view to_string(CorrectorMode m) {
    switch (m) {
        case CorrectorMode::off: return "off";
        case CorrectorMode::verifier: return "verifier";
        case CorrectorMode::corrector: return "corrector";
    }
    return "off";
}

const std::string& corrector_system_prompt() {
    static const std::string prompt =
        "You are a helpful assistant that check if SQL query are correctly representing user "
        "Question.";
    return prompt;
}

namespace {

const std::string& verifier_system_prompt() {
    static const std::string prompt =
        "You are a helpful assistant that check if SQL query are correctly representing user "
        "Question. Answer True if the SQL query is correct, or False followed by an explanation "
        "of the error.";
    return prompt;
}

std::string trim_trailing_newlines(std::string text) {
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
}

}  // namespace

std::string corrector_user_message(const std::string& schema_text, const std::string& question,
                                   const std::string& sql) {
    return trim_trailing_newlines(schema_text) + "\n\"" + question + "\"\n" + sql;
}

VerifierVerdict parse_verifier_response(const std::string& raw) {
    std::size_t i = 0;
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;

    auto word_is = [&](std::string_view word) {
        if (i + word.size() > raw.size()) return false;
        for (std::size_t k = 0; k < word.size(); ++k)
            if (std::tolower(static_cast<unsigned char>(raw[i + k])) != word[k]) return false;
        const std::size_t end = i + word.size();
        return end == raw.size() || !std::isalnum(static_cast<unsigned char>(raw[end]));
    };

    bool is_correct;
    std::size_t after;
    if (word_is("true")) {
        is_correct = true;
        after = i + 4;
    } else if (word_is("false")) {
        is_correct = false;
        after = i + 5;
    } else {
        return {false, raw};
    }

    while (after < raw.size()) {
        const char c = raw[after];
        if (std::isspace(static_cast<unsigned char>(c)) || c == ':' || c == ',' || c == '.' ||
            c == '-' || c == ')')
            ++after;
        else
            break;
    }
    return {is_correct, trim_trailing_newlines(raw.substr(after))};
}

FinetuneBuild build_finetune_dataset(const std::vector<FinetuneRecord>& records) {
    FinetuneBuild build;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const FinetuneRecord& r = records[i];
        if (r.question.empty() || r.gold_sql.empty())
            throw ParseError("record " + std::to_string(i) + " has an empty question or gold SQL");

        FinetuneSample sample;
        sample.messages.push_back({Role::system, corrector_system_prompt()});
        sample.messages.push_back(
            {Role::user, corrector_user_message(r.schema_text, r.question, r.input_sql)});
        if (r.input_sql == r.gold_sql) {
            sample.messages.push_back({Role::assistant, r.input_sql});
            sample.label = FinetuneSample::Label::correct_passthrough;
            ++build.n_passthrough;
        } else {
            sample.messages.push_back({Role::assistant, r.gold_sql});
            sample.label = FinetuneSample::Label::corrected;
            ++build.n_corrected;
        }
        build.samples.push_back(std::move(sample));
    }
    return build;
}

void write_finetune_jsonl(const FinetuneBuild& build, const std::filesystem::path& path) {
    std::string out;
    for (const auto& sample : build.samples) {
        ordered_json messages = ordered_json::array();
        for (const auto& m : sample.messages)
            messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
        ordered_json line;
        line["messages"] = std::move(messages);
        out += line.dump();
        out += "\n";
    }
    detail::write_text_file_atomic(path, out);
}

std::vector<FinetuneSample> parse_finetune_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fine-tune file: " + path.string());

    std::vector<FinetuneSample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (!doc.contains("messages") || !doc["messages"].is_array() ||
            doc["messages"].size() != 3)
            throw ParseError(where + ": expected exactly three messages");

        FinetuneSample sample;
        static const Role expected[3] = {Role::system, Role::user, Role::assistant};
        for (std::size_t i = 0; i < 3; ++i) {
            const json& m = doc["messages"][i];
            ChatMessage msg;
            msg.role = role_from_string(m.at("role").get<std::string>());
            msg.content = m.at("content").get<std::string>();
            if (msg.role != expected[i]) throw ParseError(where + ": unexpected role order");
            if (msg.content.empty()) throw ParseError(where + ": empty message content");
            sample.messages.push_back(std::move(msg));
        }
        // The user message ends with the input SQL after the quoted question;
        // a matching assistant reply marks a pass-through sample.
        const std::string& user = sample.messages[1].content;
        const std::size_t tail = user.rfind("\"\n");
        const std::string input_sql = tail == std::string::npos ? "" : user.substr(tail + 2);
        sample.label = input_sql == sample.messages[2].content
                           ? FinetuneSample::Label::correct_passthrough
                           : FinetuneSample::Label::corrected;
        samples.push_back(std::move(sample));
    }
    return samples;
}

void write_finetune_job_config(const std::string& base_model, int epochs,
                               const std::filesystem::path& dataset_file,
                               const std::filesystem::path& path) {
    ordered_json doc;
    doc["base_model"] = base_model;
    doc["epochs"] = epochs;
    doc["training_file"] = dataset_file.string();
    detail::write_text_file_atomic(path, doc.dump(1) + "\n");
}

Pipeline::Pipeline(ChatClient& client, const SchemaCatalog& catalog, RunConfig config,
                   const ExemplarPool* pool, CachedEmbedder* embedder)
    : client_(client), catalog_(catalog), config_(std::move(config)), pool_(pool),
      embedder_(embedder) {
    if (config_.selection && !pool_)
        throw ConfigError("a selection strategy is configured but no exemplar pool was given");
    if (config_.reviser_with_exemplars && !pool_)
        throw ConfigError("reviser exemplars are configured but no exemplar pool was given");
}

ChatResponse Pipeline::chat_user(const std::string& model, const std::string& prompt,
                                 TokenUsage& usage) {
    ChatRequest request;
    request.model = model;
    request.messages.push_back({Role::user, prompt});
    request.temperature = config_.temperature;
    request.max_output_tokens = config_.max_output_tokens;
    ChatResponse response = client_.chat(request);
    usage.prompt_tokens += response.prompt_tokens;
    usage.completion_tokens += response.completion_tokens;
    return response;
}

std::string Pipeline::preliminary_sql(const DatabaseSchema& schema,
                                      const std::vector<HistoryItem>& history,
                                      const std::string& question) {
    const RenderedPrompt prompt = render_zero_shot(schema, history, question, PromptStyle::odp,
                                                   config_.history_mode, false);
    const std::string model =
        config_.preliminary_model.empty() ? config_.generator_model : config_.preliminary_model;
    TokenUsage scratch;
    const ChatResponse response = chat_user(model, prompt.text, scratch);
    try {
        return extract_sql(response.text);
    } catch (const ExtractError&) {
        return "";
    }
}

RenderedPrompt Pipeline::build_prompt(const DatabaseSchema& schema,
                                      const std::vector<HistoryItem>& history,
                                      const std::string& question,
                                      const std::string& predicted_sql, std::uint64_t turn_seed) {
    if (!config_.selection)
        return render_zero_shot(schema, history, question, config_.style, config_.history_mode,
                                config_.with_values);

    const StrategySettings& sel = *config_.selection;
    const bool needs_sql = sel.strategy == Strategy::qrs || sel.strategy == Strategy::dail;
    if (needs_sql && predicted_sql.empty())
        return render_zero_shot(schema, history, question, config_.style, config_.history_mode,
                                config_.with_values);

    const SelectionResult selection =
        select_exemplars(sel.strategy, *pool_, question, schema, predicted_sql, sel.k,
                         sel.dail_threshold, embedder_, turn_seed);
    std::vector<Exemplar> exemplars;
    exemplars.reserve(selection.ranked.size());
    for (const auto& scored : selection.ranked) exemplars.push_back(pool_->exemplars[scored.index]);

    return render_icl(schema, history, question, exemplars, catalog_, config_.style,
                      config_.history_mode, config_.with_values, config_.budget_tokens,
                      config_.max_shots);
}

Prediction Pipeline::revise(const DatabaseSchema& schema, const std::vector<HistoryItem>& history,
                            const std::string& question, const std::string& preliminary) {
    if (preliminary.empty()) throw Error("revision needs a preliminary SQL query");

    static const std::string instruction =
        "If this SQL query is correct, rewrite it. If it is incorrect, modify it. "
        "Write the SQL query only.";

    std::string text;
    if (config_.reviser_with_exemplars && !pool_->exemplars.empty()) {
        const std::string tail = preliminary + "\n\n" + instruction + "\n";
        const SelectionResult ranked = select_qrs(
            *pool_, preliminary, config_.selection ? config_.selection->k : config_.max_shots);
        std::vector<Exemplar> exemplars;
        for (const auto& scored : ranked.ranked) exemplars.push_back(pool_->exemplars[scored.index]);
        const std::int64_t budget =
            std::max<std::int64_t>(1, config_.budget_tokens - estimate_tokens(tail));
        const RenderedPrompt base =
            render_icl(schema, history, question, exemplars, catalog_, config_.style,
                       config_.history_mode, config_.with_values, budget, config_.max_shots);
        text = base.text + tail;
    } else {
        const RenderedPrompt base = render_zero_shot(schema, history, question, config_.style,
                                                     config_.history_mode, config_.with_values);
        text = base.text + preliminary + "\n\n" + instruction + "\n";
    }

    Prediction prediction;
    const ChatResponse response = chat_user(config_.generator_model, text, prediction.usage);
    prediction.raw_response = response.text;
    try {
        prediction.extracted_sql = extract_sql(response.text);
    } catch (const ExtractError&) {
        prediction.extracted_sql.clear();
    }
    return prediction;
}

VerifierVerdict Pipeline::verify(const DatabaseSchema& schema, const std::string& question,
                                 const std::string& sql) {
    ChatRequest request;
    request.model = config_.corrector_model;
    request.messages.push_back({Role::system, verifier_system_prompt()});
    request.messages.push_back(
        {Role::user,
         corrector_user_message(render_schema(schema, PromptStyle::bsp, false), question, sql)});
    request.temperature = config_.temperature;
    request.max_output_tokens = config_.max_output_tokens;
    return parse_verifier_response(client_.chat(request).text);
}

std::string Pipeline::correct(const DatabaseSchema& schema, const std::string& question,
                              const std::string& sql, bool& fallback) {
    ChatRequest request;
    request.model = config_.corrector_model;
    request.messages.push_back({Role::system, corrector_system_prompt()});
    request.messages.push_back(
        {Role::user,
         corrector_user_message(render_schema(schema, PromptStyle::bsp, false), question, sql)});
    request.temperature = config_.temperature;
    request.max_output_tokens = config_.max_output_tokens;

    const ChatResponse response = client_.chat(request);
    try {
        fallback = false;
        return extract_sql(response.text);
    } catch (const ExtractError&) {
        fallback = true;
        return sql;
    }
}

Prediction Pipeline::run_turn(const DatabaseSchema& schema, const Interaction& interaction,
                              const Turn& turn, const std::vector<HistoryItem>& history) {
    const std::uint64_t turn_seed =
        config_.seed ^ detail::fnv1a64(interaction.id + "#" + std::to_string(turn.position));

    Prediction prediction;
    const bool needs_preliminary =
        config_.reviser ||
        (config_.selection && (config_.selection->strategy == Strategy::qrs ||
                               config_.selection->strategy == Strategy::dail));
    std::string preliminary;
    if (needs_preliminary) preliminary = preliminary_sql(schema, history, turn.question);

    if (config_.reviser && !preliminary.empty()) {
        prediction = revise(schema, history, turn.question, preliminary);
    } else {
        const RenderedPrompt prompt =
            build_prompt(schema, history, turn.question, preliminary, turn_seed);
        const ChatResponse response =
            chat_user(config_.generator_model, prompt.text, prediction.usage);
        prediction.raw_response = response.text;
        try {
            prediction.extracted_sql = extract_sql(response.text);
        } catch (const ExtractError&) {
            prediction.extracted_sql.clear();
        }
    }
    prediction.interaction_id = interaction.id;
    prediction.turn_position = turn.position;
    if (prediction.extracted_sql.empty()) return prediction;

    if (config_.corrector == CorrectorMode::corrector) {
        bool fallback = false;
        prediction.corrected_sql =
            correct(schema, turn.question, prediction.extracted_sql, fallback);
        prediction.corrector_fallback = fallback;
        prediction.correction_calls = 1;
    } else if (config_.corrector == CorrectorMode::verifier) {
        // Verify; on False, feed the explanation back and regenerate, up to
        // verifier_max_retries times. A transport failure mid-loop keeps the
        // last successful SQL.
        try {
            std::string current = prediction.extracted_sql;
            VerifierVerdict verdict = verify(schema, turn.question, current);
            ++prediction.correction_calls;
            prediction.verdicts.push_back(verdict);

            const RenderedPrompt base = render_zero_shot(schema, history, turn.question,
                                                         config_.style, config_.history_mode,
                                                         config_.with_values);
            int retries = 0;
            while (!verdict.is_correct && retries < config_.verifier_max_retries) {
                ++retries;
                const std::string feedback =
                    base.text + current + "\nThe SQL query above is incorrect: " +
                    verdict.explanation + "\nWrite a new revised SQL query.\n";
                const ChatResponse regenerated = chat_user(config_.generator_model, feedback,
                                                           prediction.usage);
                ++prediction.correction_calls;
                try {
                    current = extract_sql(regenerated.text);
                    prediction.corrected_sql = current;
                } catch (const ExtractError&) {
                    // keep the previous SQL; still re-verify it below
                }
                verdict = verify(schema, turn.question, current);
                ++prediction.correction_calls;
                prediction.verdicts.push_back(verdict);
            }
        } catch (const LlmError&) {
            // keep whatever the loop had settled on so far
        }
    }
    return prediction;
}

std::vector<Prediction> Pipeline::run_interaction(const Interaction& interaction) {
    auto schema_it = catalog_.find(interaction.db_id);
    if (schema_it == catalog_.end())
        throw Error("interaction " + interaction.id + " references unknown database " +
                    interaction.db_id);

    DatabaseSchema schema = schema_it->second;
    if (config_.with_values && config_.value_rows > 0 && !schema.db_file_path.empty() &&
        std::filesystem::exists(schema.db_file_path)) {
        schema = sample_cells(schema, config_.value_rows, config_.seed);
    }

    std::vector<Prediction> predictions;
    std::vector<HistoryItem> history;
    bool aborted = false;
    for (const auto& turn : interaction.turns) {
        if (aborted) {
            Prediction empty;
            empty.interaction_id = interaction.id;
            empty.turn_position = turn.position;
            predictions.push_back(std::move(empty));
            continue;
        }
        try {
            Prediction prediction = run_turn(schema, interaction, turn, history);
            history.push_back({turn.question, prediction.final_sql()});
            predictions.push_back(std::move(prediction));
        } catch (const LlmError&) {
            aborted = true;
            Prediction empty;
            empty.interaction_id = interaction.id;
            empty.turn_position = turn.position;
            predictions.push_back(std::move(empty));
        }
    }
    return predictions;
}

std::vector<Prediction> Pipeline::run_dataset(
    const Dataset& dataset, int workers,
    const std::function<void(const Interaction&)>& progress) {
    const std::size_t n = dataset.interactions.size();
    std::vector<std::vector<Prediction>> per_interaction(n);

    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            per_interaction[i] = run_interaction(dataset.interactions[i]);
            if (progress) progress(dataset.interactions[i]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::mutex progress_mutex;
        std::exception_ptr failure;
        std::mutex failure_mutex;

        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    per_interaction[i] = run_interaction(dataset.interactions[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
                if (progress) {
                    std::lock_guard<std::mutex> lock(progress_mutex);
                    progress(dataset.interactions[i]);
                }
            }
        };

        std::vector<std::thread> threads;
        const int count = std::min<int>(workers, static_cast<int>(n));
        threads.reserve(static_cast<std::size_t>(count));
        for (int t = 0; t < count; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    std::vector<Prediction> flat;
    flat.reserve(dataset.turn_count());
    for (auto& chunk : per_interaction)
        for (auto& p : chunk) flat.push_back(std::move(p));
    return flat;
}

void write_predictions_jsonl(const std::vector<Prediction>& predictions,
                             const std::filesystem::path& path) {
    std::string out;
    for (const auto& p : predictions) {
        ordered_json line;
        line["interaction_id"] = p.interaction_id;
        line["turn_position"] = p.turn_position;
        line["raw_response"] = p.raw_response;
        line["extracted_sql"] = p.extracted_sql;
        if (p.corrected_sql) line["corrected_sql"] = *p.corrected_sql;
        else line["corrected_sql"] = nullptr;
        ordered_json verdicts = ordered_json::array();
        for (const auto& v : p.verdicts)
            verdicts.push_back({{"is_correct", v.is_correct}, {"explanation", v.explanation}});
        line["verdicts"] = std::move(verdicts);
        line["usage"] = {{"prompt_tokens", p.usage.prompt_tokens},
                         {"completion_tokens", p.usage.completion_tokens}};
        line["corrector_fallback"] = p.corrector_fallback;
        line["correction_calls"] = p.correction_calls;
        out += line.dump();
        out += "\n";
    }
    detail::write_text_file_atomic(path, out);
}

std::vector<Prediction> load_predictions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open predictions file: " + path.string());

    std::vector<Prediction> predictions;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path.filename().string() + ":" + std::to_string(line_no) + ": " +
                             e.what());
        }
        Prediction p;
        p.interaction_id = doc.at("interaction_id").get<std::string>();
        p.turn_position = doc.at("turn_position").get<int>();
        p.raw_response = doc.value("raw_response", "");
        p.extracted_sql = doc.value("extracted_sql", "");
        if (doc.contains("corrected_sql") && !doc["corrected_sql"].is_null())
            p.corrected_sql = doc["corrected_sql"].get<std::string>();
        if (doc.contains("verdicts")) {
            for (const auto& v : doc["verdicts"])
                p.verdicts.push_back(
                    {v.at("is_correct").get<bool>(), v.value("explanation", "")});
        }
        if (doc.contains("usage")) {
            p.usage.prompt_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
            p.usage.completion_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
        }
        p.corrector_fallback = doc.value("corrector_fallback", false);
        p.correction_calls = doc.value("correction_calls", std::int64_t{0});
        predictions.push_back(std::move(p));
    }
    return predictions;
}

}  // namespace convsql
