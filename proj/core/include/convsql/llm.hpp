#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "convsql/types.hpp"

namespace convsql {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_output_tokens = 512;
};

struct ChatResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    bool cached = false;
};

// SHA-256 over the canonical JSON of (model, messages, temperature,
// max_output_tokens); doubles as the on-disk cache key.
std::string request_fingerprint(const ChatRequest& request);

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual ChatResponse send(const ChatRequest& request) = 0;
};

// OpenAI-compatible /chat/completions endpoint. The key is read from the
// named environment variable at call time; a missing key throws LlmError.
class HttpChatTransport : public ChatTransport {
public:
    HttpChatTransport(std::string base_url, std::string api_key_env = "CONVSQL_API_KEY",
                      std::chrono::seconds timeout = std::chrono::seconds(120));
    ChatResponse send(const ChatRequest& request) override;

private:
    std::string base_url_;
    std::string api_key_env_;
    std::chrono::seconds timeout_;
};

// Scripted transport for offline runs and tests. Resolution order per call:
// by-fingerprint entry, then next queued response, then the responder
// function, then the default text. Token counts are byte-length estimates.
class MockChatTransport : public ChatTransport {
public:
    MockChatTransport() = default;

    // Script file: {"by_hash": {fingerprint: text}, "responses": [text...],
    //               "default": text}
    static std::shared_ptr<MockChatTransport> from_script_file(const std::filesystem::path& path);

    void push_response(std::string text);
    void set_by_hash(std::string fingerprint, std::string text);
    void set_default(std::string text);
    void set_responder(std::function<std::string(const ChatRequest&)> fn);
    // The next n send() calls throw LlmError before any script lookup.
    void fail_next(int n);

    ChatResponse send(const ChatRequest& request) override;

    std::int64_t call_count() const;
    std::vector<ChatRequest> requests() const;  // copies, for prompt assertions

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::string> by_hash_;
    std::vector<std::string> queue_;
    std::size_t queue_pos_ = 0;
    std::optional<std::string> default_;
    std::function<std::string(const ChatRequest&)> responder_;
    int fail_budget_ = 0;
    std::int64_t calls_ = 0;
    std::vector<ChatRequest> seen_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{200};
    bool jitter = true;
};

struct UsageTotals {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t requests = 0;    // network (non-cached) responses
    std::int64_t cache_hits = 0;  // cached responses carry no new cost
};

class UsageLedger {
public:
    void record(const std::string& model, const ChatResponse& response);
    UsageTotals totals(const std::string& model) const;
    UsageTotals grand_totals() const;
    std::map<std::string, UsageTotals> snapshot() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, UsageTotals> per_model_;
};

// Chat client with deterministic content-addressed caching, bounded
// exponential-backoff retries and usage accounting. Safe to share across
// threads; max_inflight bounds concurrent transport calls.
class ChatClient {
public:
    explicit ChatClient(std::shared_ptr<ChatTransport> transport,
                        std::filesystem::path cache_dir = {}, RetryPolicy retry = {},
                        int max_inflight = 4);
    ~ChatClient();

    // Cache hit: returns the stored response with cached=true, no transport
    // call. Miss: sends with retries, stores, returns. A response whose
    // completion exceeds request.max_output_tokens is rejected (LlmError).
    ChatResponse chat(const ChatRequest& request);

    UsageLedger& ledger() { return ledger_; }
    const UsageLedger& ledger() const { return ledger_; }
    const std::filesystem::path& cache_dir() const { return cache_dir_; }

private:
    ChatResponse send_with_retries(const ChatRequest& request);

    std::shared_ptr<ChatTransport> transport_;
    std::filesystem::path cache_dir_;
    RetryPolicy retry_;
    UsageLedger ledger_;
    std::unique_ptr<class InflightGate> gate_;
};

}  // namespace convsql
