#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "convsql/llm.hpp"

#include <fstream>
#include <random>
#include <semaphore>
#include <thread>

#include "convsql/promptgen.hpp"
#include "httplib.h"
#include "internal.hpp"
#include "json.hpp"

namespace convsql {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw ParseError("unknown chat role: " + std::string(s));
}

namespace {

ordered_json request_to_json(const ChatRequest& request) {
    ordered_json messages = ordered_json::array();
    for (const auto& m : request.messages)
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    ordered_json doc;
    doc["model"] = request.model;
    doc["messages"] = std::move(messages);
    doc["temperature"] = request.temperature;
    doc["max_output_tokens"] = request.max_output_tokens;
    return doc;
}

}  // namespace

std::string request_fingerprint(const ChatRequest& request) {
    return detail::sha256_hex(request_to_json(request).dump());
}

HttpChatTransport::HttpChatTransport(std::string base_url, std::string api_key_env,
                                     std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), api_key_env_(std::move(api_key_env)), timeout_(timeout) {}

ChatResponse HttpChatTransport::send(const ChatRequest& request) {
    const std::string api_key = detail::getenv_or(api_key_env_.c_str(), "");
    if (api_key.empty()) throw LlmError("API key not set; export " + api_key_env_);

    std::string host = base_url_;
    std::string prefix;
    const std::size_t scheme = host.find("://");
    const std::size_t path_start = host.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start != std::string::npos) {
        prefix = host.substr(path_start);
        host = host.substr(0, path_start);
        while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    }

    httplib::Client client(host);
    client.set_read_timeout(timeout_.count(), 0);
    client.set_connection_timeout(30, 0);

    json body;
    body["model"] = request.model;
    body["messages"] = json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back(
            {{"role", std::string(to_string(m.role))}, {"content", m.content}});
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_output_tokens;

    httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
    auto res = client.Post(prefix + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw LlmError("chat request failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
        throw LlmError("chat request rejected (HTTP " + std::to_string(res->status) +
                       "): check " + api_key_env_);
    if (res->status != 200)
        throw LlmError("chat request returned HTTP " + std::to_string(res->status) + ": " +
                       res->body);

    json doc;
    try {
        doc = json::parse(res->body);
    } catch (const json::exception& e) {
        throw LlmError(std::string("malformed chat response: ") + e.what());
    }

    ChatResponse response;
    try {
        response.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw LlmError("chat response lacks choices[0].message.content");
    }
    if (doc.contains("usage")) {
        response.prompt_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
        response.completion_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
    }
    return response;
}

std::shared_ptr<MockChatTransport> MockChatTransport::from_script_file(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock script: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("malformed mock script " + path.string() + ": " + e.what());
    }
    auto mock = std::make_shared<MockChatTransport>();
    if (doc.contains("by_hash")) {
        for (auto it = doc["by_hash"].begin(); it != doc["by_hash"].end(); ++it)
            mock->set_by_hash(it.key(), it.value().get<std::string>());
    }
    if (doc.contains("responses")) {
        for (const auto& r : doc["responses"]) mock->push_response(r.get<std::string>());
    }
    if (doc.contains("default")) mock->set_default(doc["default"].get<std::string>());
    return mock;
}

void MockChatTransport::push_response(std::string text) {
    std::lock_guard<std::mutex> lock(mutex_);
    queue_.push_back(std::move(text));
}

void MockChatTransport::set_by_hash(std::string fingerprint, std::string text) {
    std::lock_guard<std::mutex> lock(mutex_);
    by_hash_[std::move(fingerprint)] = std::move(text);
}

void MockChatTransport::set_default(std::string text) {
    std::lock_guard<std::mutex> lock(mutex_);
    default_ = std::move(text);
}

void MockChatTransport::set_responder(std::function<std::string(const ChatRequest&)> fn) {
    std::lock_guard<std::mutex> lock(mutex_);
    responder_ = std::move(fn);
}

void MockChatTransport::fail_next(int n) {
    std::lock_guard<std::mutex> lock(mutex_);
    fail_budget_ = n;
}

ChatResponse MockChatTransport::send(const ChatRequest& request) {
    std::function<std::string(const ChatRequest&)> responder;
    std::string text;
    bool resolved = false;
    {
        std::lock_guard<std::mutex> lock(mutex_);
        ++calls_;
        seen_.push_back(request);
        if (fail_budget_ > 0) {
            --fail_budget_;
            throw LlmError("scripted transport failure");
        }
        auto it = by_hash_.find(request_fingerprint(request));
        if (it != by_hash_.end()) {
            text = it->second;
            resolved = true;
        } else if (queue_pos_ < queue_.size()) {
            text = queue_[queue_pos_++];
            resolved = true;
        } else if (responder_) {
            responder = responder_;
        } else if (default_) {
            text = *default_;
            resolved = true;
        }
    }
    if (!resolved) {
        if (!responder) throw LlmError("mock transport has no response for request");
        text = responder(request);
    }

    ChatResponse response;
    response.text = std::move(text);
    std::string prompt_text;
    for (const auto& m : request.messages) prompt_text += m.content;
    response.prompt_tokens = estimate_tokens(prompt_text);
    response.completion_tokens = estimate_tokens(response.text);
    return response;
}

std::int64_t MockChatTransport::call_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return calls_;
}

std::vector<ChatRequest> MockChatTransport::requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return seen_;
}

void UsageLedger::record(const std::string& model, const ChatResponse& response) {
    std::lock_guard<std::mutex> lock(mutex_);
    UsageTotals& totals = per_model_[model];
    if (response.cached) {
        ++totals.cache_hits;
        return;
    }
    ++totals.requests;
    totals.prompt_tokens += response.prompt_tokens;
    totals.completion_tokens += response.completion_tokens;
}

UsageTotals UsageLedger::totals(const std::string& model) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = per_model_.find(model);
    return it == per_model_.end() ? UsageTotals{} : it->second;
}

UsageTotals UsageLedger::grand_totals() const {
    std::lock_guard<std::mutex> lock(mutex_);
    UsageTotals grand;
    for (const auto& [model, totals] : per_model_) {
        grand.prompt_tokens += totals.prompt_tokens;
        grand.completion_tokens += totals.completion_tokens;
        grand.requests += totals.requests;
        grand.cache_hits += totals.cache_hits;
    }
    return grand;
}

std::map<std::string, UsageTotals> UsageLedger::snapshot() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return per_model_;
}

// Bounds concurrent transport calls without limiting cache hits.
class InflightGate {
public:
    explicit InflightGate(int max_inflight)
        : semaphore_(std::max(1, max_inflight)) {}

    class Pass {
    public:
        explicit Pass(std::counting_semaphore<256>& s) : semaphore_(s) { semaphore_.acquire(); }
        ~Pass() { semaphore_.release(); }
        Pass(const Pass&) = delete;
        Pass& operator=(const Pass&) = delete;

    private:
        std::counting_semaphore<256>& semaphore_;
    };

    Pass pass() { return Pass(semaphore_); }

private:
    std::counting_semaphore<256> semaphore_;
};

ChatClient::ChatClient(std::shared_ptr<ChatTransport> transport, std::filesystem::path cache_dir,
                       RetryPolicy retry, int max_inflight)
    : transport_(std::move(transport)), cache_dir_(std::move(cache_dir)), retry_(retry),
      gate_(std::make_unique<InflightGate>(max_inflight)) {
    if (!transport_) throw ConfigError("chat client needs a transport");
    if (!cache_dir_.empty()) std::filesystem::create_directories(cache_dir_);
}

ChatClient::~ChatClient() = default;

ChatResponse ChatClient::send_with_retries(const ChatRequest& request) {
    std::mt19937_64 rng(std::random_device{}());
    const int attempts = std::max(1, retry_.max_attempts);
    std::chrono::milliseconds delay = retry_.base_delay;
    for (int attempt = 1;; ++attempt) {
        try {
            auto pass = gate_->pass();
            return transport_->send(request);
        } catch (const LlmError&) {
            if (attempt >= attempts) throw;
        }
        auto wait = delay;
        if (retry_.jitter && delay.count() > 0) {
            std::uniform_int_distribution<std::int64_t> spread(0, delay.count());
            wait += std::chrono::milliseconds(spread(rng));
        }
        std::this_thread::sleep_for(wait);
        delay *= 2;
    }
}

ChatResponse ChatClient::chat(const ChatRequest& request) {
    if (request.messages.empty()) throw LlmError("chat request has no messages");
    const std::string fingerprint = request_fingerprint(request);
    const std::filesystem::path cache_file =
        cache_dir_.empty() ? std::filesystem::path{} : cache_dir_ / (fingerprint + ".json");

    if (!cache_file.empty() && std::filesystem::exists(cache_file)) {
        std::ifstream in(cache_file);
        json doc;
        try {
            in >> doc;
            const json& r = doc.at("response");
            ChatResponse response;
            response.text = r.at("text").get<std::string>();
            response.prompt_tokens = r.value("prompt_tokens", std::int64_t{0});
            response.completion_tokens = r.value("completion_tokens", std::int64_t{0});
            response.cached = true;
            ledger_.record(request.model, response);
            return response;
        } catch (const json::exception&) {
            // Corrupt entry: fall through and refetch.
        }
    }

    ChatResponse response = send_with_retries(request);
    response.cached = false;
    if (response.completion_tokens > request.max_output_tokens)
        throw LlmError("completion exceeds max_output_tokens (" +
                       std::to_string(response.completion_tokens) + " > " +
                       std::to_string(request.max_output_tokens) + ")");
    ledger_.record(request.model, response);

    if (!cache_file.empty()) {
        ordered_json doc;
        doc["request"] = request_to_json(request);
        doc["response"] = {{"text", response.text},
                           {"prompt_tokens", response.prompt_tokens},
                           {"completion_tokens", response.completion_tokens}};
        detail::write_text_file_atomic(cache_file, doc.dump(1) + "\n");
    }
    return response;
}

}  // namespace convsql
