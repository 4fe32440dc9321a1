#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "elena/assets.hpp"
#include "elena/prompt_forge.hpp"
#include "elena/types.hpp"

namespace elena {

// `kind` selects the adapter: "mock", "openai" (chat-completions wire format)
// or "gemini" (generateContent). auth_ref names an environment variable; the
// secret itself is read at request time and never stored or serialized.
struct ProviderConfig {
    std::string provider_id;
    std::string kind = "mock";
    std::string endpoint;
    std::string auth_ref;
    std::string model_name;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    int timeout_ms = 60000;
    int max_retries = 3;
    int requests_per_minute = 60;
    int backoff_base_ms = 1000;
    std::filesystem::path mock_script;

    void validate() const;  // throws InvalidArgument
};

Json to_json(const ProviderConfig& c);
ProviderConfig provider_from_json(const Json& j);

// Case-insensitive substring patterns, one per line ('#' comments allowed).
class RefusalClassifier {
public:
    static RefusalClassifier from_text(std::string_view text);
    static const RefusalClassifier& builtin();

    // Empty (or whitespace-only) text counts as a refusal-equivalent.
    bool matches(std::string_view raw) const;
    const std::vector<std::string>& patterns() const { return patterns_; }

private:
    std::vector<std::string> patterns_;
};

bool classify_refusal(std::string_view raw, const RefusalClassifier& classifier = RefusalClassifier::builtin());

// One provider round trip. Retryable failures are retried by dispatch;
// terminal ones end the request.
struct AttemptResult {
    enum class Status { Ok, Retryable, Terminal };
    Status status = Status::Ok;
    std::string text;
    FailureKind kind = FailureKind::TransportError;
    std::string detail;
    int http_status = 0;

    static AttemptResult ok(std::string text) { return {Status::Ok, std::move(text), {}, {}, 200}; }
    static AttemptResult retryable(FailureKind k, std::string detail, int http = 0) {
        return {Status::Retryable, {}, k, std::move(detail), http};
    }
    static AttemptResult terminal(FailureKind k, std::string detail, int http = 0) {
        return {Status::Terminal, {}, k, std::move(detail), http};
    }
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string id() const = 0;
    virtual AttemptResult attempt(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                                  const ProviderConfig& cfg) = 0;
};

// Deterministic scripted provider. The script is a JSON object keyed by
// record_id whose values are either the raw response text or an object with
// any of: "text"; "failure" + "detail" (scripted FailureOutcome); "fail_first"
// (list of retryable failure kinds returned before the real answer); or
// per-prompt-kind entries ("naive", "elena", "two_step_describe",
// "two_step_parse") holding one of the former. Unknown ids yield
// MalformedResponse.
class MockProvider final : public Provider {
public:
    static std::unique_ptr<MockProvider> from_file(const std::filesystem::path& script,
                                                   std::string id = "mock");  // FixtureLoad
    static std::unique_ptr<MockProvider> from_json(const Json& script, std::string id = "mock");

    std::string id() const override { return id_; }
    AttemptResult attempt(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                          const ProviderConfig& cfg) override;

    // Total attempt() calls, across threads.
    std::size_t dispatch_count() const;
    std::size_t dispatch_count(const std::string& record_id) const;

private:
    MockProvider() = default;
    std::string id_;
    Json script_;
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> calls_;
    std::size_t total_ = 0;
};

// OpenAI-compatible chat completions or Gemini generateContent over HTTP(S).
class HttpProvider final : public Provider {
public:
    explicit HttpProvider(ProviderConfig cfg, const RefusalClassifier& refusals = RefusalClassifier::builtin());
    std::string id() const override { return cfg_.provider_id; }
    AttemptResult attempt(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                          const ProviderConfig& cfg) override;

private:
    ProviderConfig cfg_;
    RefusalClassifier refusals_;
};

// Wire-format helpers, exposed for testing.
Json openai_request_body(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                         const ProviderConfig& cfg);
Json gemini_request_body(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                         const ProviderConfig& cfg);
// Returns the answer text, or a Refusal/MalformedResponse attempt result.
AttemptResult openai_read_response(std::string_view body);
AttemptResult gemini_read_response(std::string_view body);
std::string base64_encode(std::span<const std::uint8_t> bytes);

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg);

class Clock {
public:
    virtual ~Clock() = default;
    virtual std::chrono::milliseconds now() = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock final : public Clock {
public:
    std::chrono::milliseconds now() override;
    void sleep_for(std::chrono::milliseconds d) override;
};

// Simulated time: sleeping advances the clock instantly.
class ManualClock final : public Clock {
public:
    std::chrono::milliseconds now() override;
    void sleep_for(std::chrono::milliseconds d) override;
    void advance(std::chrono::milliseconds d) { sleep_for(d); }
    std::chrono::milliseconds total_slept() const;

private:
    mutable std::mutex mu_;
    std::chrono::milliseconds now_{0};
    std::chrono::milliseconds slept_{0};
};

// Sliding 60 s window: at most `per_minute` grants in any window.
class RateLimiter {
public:
    RateLimiter(int per_minute, Clock& clock);
    void acquire();
    // Grant timestamps, for assertions.
    std::vector<std::chrono::milliseconds> grants() const;

private:
    int per_minute_;
    Clock& clock_;
    mutable std::mutex mu_;
    std::deque<std::chrono::milliseconds> window_;
    std::vector<std::chrono::milliseconds> grants_;
};

// Exponential backoff: base * 2^attempt, stretched by a jitter factor in
// [1, 1.25) derived from (record_id, attempt) so reruns sleep identically.
std::chrono::milliseconds backoff_delay(int base_ms, int attempt, std::string_view record_id);

struct AttemptLog {
    std::string record_id;
    PromptKind prompt_kind = PromptKind::Elena;
    int attempt = 0;
    std::string timestamp;  // UTC, ISO-8601
    std::int64_t latency_ms = 0;
    std::string outcome;    // "ok" or a failure kind
    int http_status = 0;
    std::string detail;
};

Json to_json(const AttemptLog& a);

struct DispatchResult {
    std::variant<std::string, FailureOutcome> outcome;
    std::string raw_text;  // last answer text, kept for refusals too
    int retry_count = 0;
    std::int64_t latency_ms = 0;  // summed over attempts
    std::vector<AttemptLog> attempts;

    const std::string* text() const { return std::get_if<std::string>(&outcome); }
    const FailureOutcome* failure() const { return std::get_if<FailureOutcome>(&outcome); }
};

struct DispatchContext {
    Clock* clock = nullptr;          // SystemClock when null
    RateLimiter* limiter = nullptr;  // unlimited when null
    const RefusalClassifier* refusals = nullptr;
    std::function<void(const AttemptLog&)> on_attempt;
};

// Throws InvalidArgument when the envelope carries an image and `image` is
// empty, or cfg is invalid. Refusals are never retried; an empty answer is a
// MalformedResponse.
DispatchResult dispatch(Provider& provider, const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                        const ProviderConfig& cfg, const DispatchContext& ctx = {});

std::string utc_timestamp();

}  // namespace elena
