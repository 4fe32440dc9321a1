#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "elena/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <regex>
#include <sstream>
#include <thread>

#include "elena/anatomizer.hpp"
#include "elena/error.hpp"
#include "elena/image.hpp"

namespace elena {

void ProviderConfig::validate() const {
    if (provider_id.empty()) fail(ErrorCode::InvalidArgument, "provider_id must not be empty");
    if (kind != "mock" && kind != "openai" && kind != "gemini") {
        fail(ErrorCode::InvalidArgument, "provider " + provider_id + ": unknown kind '" + kind + "'");
    }
    if (kind != "mock" && endpoint.empty()) fail(ErrorCode::InvalidArgument, "provider " + provider_id + ": endpoint required");
    if (kind == "mock" && mock_script.empty()) {
        fail(ErrorCode::InvalidArgument, "provider " + provider_id + ": mock_script required");
    }
    if (temperature < 0) fail(ErrorCode::InvalidArgument, "temperature must be >= 0");
    if (max_output_tokens <= 0) fail(ErrorCode::InvalidArgument, "max_output_tokens must be positive");
    if (timeout_ms <= 0) fail(ErrorCode::InvalidArgument, "timeout_ms must be positive");
    if (max_retries < 0) fail(ErrorCode::InvalidArgument, "max_retries must be >= 0");
    if (requests_per_minute <= 0) fail(ErrorCode::InvalidArgument, "requests_per_minute must be positive");
    if (backoff_base_ms < 0) fail(ErrorCode::InvalidArgument, "backoff_base_ms must be >= 0");
}

Json to_json(const ProviderConfig& c) {
    return Json{{"provider_id", c.provider_id},
                {"kind", c.kind},
                {"endpoint", c.endpoint},
                {"auth_ref", c.auth_ref},
                {"model_name", c.model_name},
                {"temperature", c.temperature},
                {"max_output_tokens", c.max_output_tokens},
                {"timeout_ms", c.timeout_ms},
                {"max_retries", c.max_retries},
                {"requests_per_minute", c.requests_per_minute},
                {"backoff_base_ms", c.backoff_base_ms},
                {"mock_script", c.mock_script.generic_string()}};
}

ProviderConfig provider_from_json(const Json& j) {
    ProviderConfig c;
    try {
        c.provider_id = j.at("provider_id").get<std::string>();
        c.kind = j.value("kind", c.kind);
        c.endpoint = j.value("endpoint", "");
        c.auth_ref = j.value("auth_ref", "");
        c.model_name = j.value("model_name", "");
        c.temperature = j.value("temperature", c.temperature);
        c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
        c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
        c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
        c.mock_script = j.value("mock_script", "");
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("provider config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------- refusals

RefusalClassifier RefusalClassifier::from_text(std::string_view text) {
    RefusalClassifier c;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        c.patterns_.push_back(to_lower(t));
    }
    return c;
}

const RefusalClassifier& RefusalClassifier::builtin() {
    static const RefusalClassifier c = from_text(AssetStore{}.read("config/refusal_patterns.txt"));
    return c;
}

bool RefusalClassifier::matches(std::string_view raw) const {
    const auto lowered = to_lower(raw);
    if (trim(lowered).empty()) return true;
    return std::any_of(patterns_.begin(), patterns_.end(),
                       [&](const std::string& p) { return lowered.find(p) != std::string::npos; });
}

bool classify_refusal(std::string_view raw, const RefusalClassifier& classifier) {
    if (!classifier.matches(raw)) return false;
    if (trim(raw).empty()) return true;
    // A well-formed answer whose narrative happens to contain a pattern
    // ("I'm unable to move") is not a refusal.
    try {
        extract_json(raw);
        return false;
    } catch (const Error&) {
        return true;
    }
}

// ---------------------------------------------------------------- mock

std::unique_ptr<MockProvider> MockProvider::from_json(const Json& script, std::string id) {
    if (!script.is_object()) fail(ErrorCode::FixtureLoad, "mock script must be a JSON object keyed by record_id");
    std::unique_ptr<MockProvider> p(new MockProvider());
    p->id_ = std::move(id);
    p->script_ = script;
    return p;
}

std::unique_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path& script, std::string id) {
    std::string text;
    try {
        text = read_text_file(script);
    } catch (const Error& e) {
        fail(ErrorCode::FixtureLoad, "mock script " + script.string() + ": " + e.what());
    }
    const auto j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::FixtureLoad, "mock script " + script.string() + " is not valid JSON");
    return from_json(j, std::move(id));
}

namespace {

std::string script_key(PromptKind kind) {
    switch (kind) {
        case PromptKind::Naive: return "naive";
        case PromptKind::Elena: return "elena";
        case PromptKind::TwoStepDescribe: return "two_step_describe";
        case PromptKind::TwoStepParse: return "two_step_parse";
    }
    return {};
}

AttemptResult scripted(const Json& entry, PromptKind kind, std::size_t call_index, const std::string& record_id) {
    if (entry.is_string()) return AttemptResult::ok(entry.get<std::string>());
    if (!entry.is_object()) return AttemptResult::terminal(FailureKind::MalformedResponse, "bad script entry for " + record_id);
    const std::string kind_key = script_key(kind);
    if (entry.contains(kind_key)) return scripted(entry.at(kind_key), kind, call_index, record_id);
    if (entry.contains("fail_first")) {
        const auto& first = entry.at("fail_first");
        if (call_index < first.size()) {
            const auto k = parse_failure_kind(first.at(call_index).get<std::string>());
            return AttemptResult::retryable(k, "scripted transient " + std::string(to_string(k)),
                                            k == FailureKind::RateLimited ? 429 : 503);
        }
    }
    if (entry.contains("failure")) {
        const auto k = parse_failure_kind(entry.at("failure").get<std::string>());
        return AttemptResult::terminal(k, entry.value("detail", "scripted " + std::string(to_string(k))));
    }
    if (entry.contains("text")) return AttemptResult::ok(entry.at("text").get<std::string>());
    return AttemptResult::terminal(FailureKind::MalformedResponse,
                                   "no scripted " + kind_key + " response for " + record_id);
}

}  // namespace

AttemptResult MockProvider::attempt(const RequestEnvelope& envelope, std::span<const std::uint8_t>,
                                    const ProviderConfig&) {
    std::size_t index;
    {
        std::lock_guard lock(mu_);
        ++total_;
        // Per (record, kind) so fail_first applies to each stage separately.
        index = calls_[envelope.record_id + "\x1f" + std::string(to_string(envelope.prompt_kind))]++;
        ++calls_[envelope.record_id];
    }
    if (!script_.contains(envelope.record_id)) {
        return AttemptResult::terminal(FailureKind::MalformedResponse, "unknown record_id " + envelope.record_id);
    }
    try {
        return scripted(script_.at(envelope.record_id), envelope.prompt_kind, index, envelope.record_id);
    } catch (const std::exception& e) {
        return AttemptResult::terminal(FailureKind::MalformedResponse,
                                       "bad script entry for " + envelope.record_id + ": " + e.what());
    }
}

std::size_t MockProvider::dispatch_count() const {
    std::lock_guard lock(mu_);
    return total_;
}

std::size_t MockProvider::dispatch_count(const std::string& record_id) const {
    std::lock_guard lock(mu_);
    auto it = calls_.find(record_id);
    return it == calls_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------- http

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) return {};
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

namespace {

std::string system_text(const RequestEnvelope& e) {
    for (const auto& m : e.messages) {
        if (m.role == "system") return m.text;
    }
    return {};
}

const Message* user_message(const RequestEnvelope& e) {
    for (const auto& m : e.messages) {
        if (m.role == "user") return &m;
    }
    return nullptr;
}

struct ParsedUrl {
    std::string scheme_host;  // "https://host:port"
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) fail(ErrorCode::InvalidArgument, "malformed endpoint URL: " + url);
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

Json openai_request_body(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                         const ProviderConfig& cfg) {
    Json messages = Json::array();
    if (auto sys = system_text(envelope); !sys.empty()) messages.push_back({{"role", "system"}, {"content", sys}});
    const Message* user = user_message(envelope);
    Json content = Json::array();
    content.push_back({{"type", "text"}, {"text", user ? user->text : ""}});
    if (const auto* att = envelope.image(); att && !image.empty()) {
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:" + att->mime_type + ";base64," + base64_encode(image)}}}});
    }
    messages.push_back({{"role", "user"}, {"content", content}});
    return Json{{"model", cfg.model_name},
                {"temperature", cfg.temperature},
                {"max_tokens", cfg.max_output_tokens},
                {"messages", messages}};
}

Json gemini_request_body(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                         const ProviderConfig& cfg) {
    Json body;
    if (auto sys = system_text(envelope); !sys.empty()) body["systemInstruction"] = {{"parts", {{{"text", sys}}}}};
    const Message* user = user_message(envelope);
    Json parts = Json::array();
    parts.push_back({{"text", user ? user->text : ""}});
    if (const auto* att = envelope.image(); att && !image.empty()) {
        parts.push_back({{"inline_data", {{"mime_type", att->mime_type}, {"data", base64_encode(image)}}}});
    }
    body["contents"] = Json::array({Json{{"role", "user"}, {"parts", parts}}});
    body["generationConfig"] = {{"temperature", cfg.temperature}, {"maxOutputTokens", cfg.max_output_tokens}};
    return body;
}

AttemptResult openai_read_response(std::string_view body) {
    const auto j = Json::parse(body, nullptr, false);
    if (j.is_discarded()) return AttemptResult::terminal(FailureKind::MalformedResponse, "response body is not JSON");
    try {
        const auto& choice = j.at("choices").at(0);
        if (choice.value("finish_reason", "") == "content_filter") {
            return AttemptResult::terminal(FailureKind::Refusal, "finish_reason=content_filter");
        }
        const auto& content = choice.at("message").at("content");
        if (content.is_null()) {
            const auto refusal = choice.at("message").value("refusal", "");
            if (!refusal.empty()) return AttemptResult::terminal(FailureKind::Refusal, refusal);
            return AttemptResult::ok("");
        }
        return AttemptResult::ok(content.get<std::string>());
    } catch (const Json::exception& e) {
        return AttemptResult::terminal(FailureKind::MalformedResponse, std::string("unexpected response shape: ") + e.what());
    }
}

AttemptResult gemini_read_response(std::string_view body) {
    const auto j = Json::parse(body, nullptr, false);
    if (j.is_discarded()) return AttemptResult::terminal(FailureKind::MalformedResponse, "response body is not JSON");
    try {
        if (j.contains("promptFeedback") && j["promptFeedback"].contains("blockReason")) {
            return AttemptResult::terminal(FailureKind::Refusal,
                                           "blockReason=" + j["promptFeedback"]["blockReason"].get<std::string>());
        }
        if (!j.contains("candidates") || j["candidates"].empty()) {
            return AttemptResult::terminal(FailureKind::MalformedResponse, "no candidates in response");
        }
        const auto& cand = j["candidates"][0];
        const auto reason = cand.value("finishReason", "");
        if (reason == "SAFETY" || reason == "PROHIBITED_CONTENT" || reason == "BLOCKLIST") {
            return AttemptResult::terminal(FailureKind::Refusal, "finishReason=" + reason);
        }
        std::string text;
        if (cand.contains("content") && cand["content"].contains("parts")) {
            for (const auto& part : cand["content"]["parts"]) text += part.value("text", "");
        }
        return AttemptResult::ok(text);
    } catch (const Json::exception& e) {
        return AttemptResult::terminal(FailureKind::MalformedResponse, std::string("unexpected response shape: ") + e.what());
    }
}

HttpProvider::HttpProvider(ProviderConfig cfg, const RefusalClassifier& refusals)
    : cfg_(std::move(cfg)), refusals_(refusals) {}

AttemptResult HttpProvider::attempt(const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                                    const ProviderConfig& cfg) {
    const auto url = split_url(cfg.endpoint);
    httplib::Client client(url.scheme_host);
    const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    const char* secret = cfg.auth_ref.empty() ? nullptr : std::getenv(cfg.auth_ref.c_str());
    const bool gemini = cfg.kind == "gemini";
    if (secret && *secret) {
        if (gemini) {
            headers.emplace("x-goog-api-key", secret);
        } else {
            headers.emplace("Authorization", std::string("Bearer ") + secret);
        }
    }
    const Json body = gemini ? gemini_request_body(envelope, image, cfg) : openai_request_body(envelope, image, cfg);
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) {
        const auto err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
            return AttemptResult::retryable(FailureKind::Timeout, "transport: " + httplib::to_string(err));
        }
        return AttemptResult::retryable(FailureKind::TransportError, "transport: " + httplib::to_string(err));
    }
    const int status = res->status;
    if (status == 429) return AttemptResult::retryable(FailureKind::RateLimited, "HTTP 429", status);
    if (status == 408 || status == 504) return AttemptResult::retryable(FailureKind::Timeout, "HTTP " + std::to_string(status), status);
    if (status >= 500) return AttemptResult::retryable(FailureKind::TransportError, "HTTP " + std::to_string(status), status);
    if (status >= 400) {
        // Some providers report safety blocks as client errors.
        if (refusals_.matches(res->body) && !trim(res->body).empty()) {
            return AttemptResult::terminal(FailureKind::Refusal, "HTTP " + std::to_string(status) + " policy block", status);
        }
        return AttemptResult::terminal(FailureKind::TransportError, "HTTP " + std::to_string(status), status);
    }
    auto result = gemini ? gemini_read_response(res->body) : openai_read_response(res->body);
    result.http_status = status;
    return result;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == "mock") return MockProvider::from_file(cfg.mock_script, cfg.provider_id);
    return std::make_unique<HttpProvider>(cfg);
}

// ---------------------------------------------------------------- time

std::chrono::milliseconds SystemClock::now() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch());
}

void SystemClock::sleep_for(std::chrono::milliseconds d) {
    if (d.count() > 0) std::this_thread::sleep_for(d);
}

std::chrono::milliseconds ManualClock::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void ManualClock::sleep_for(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    if (d.count() > 0) {
        now_ += d;
        slept_ += d;
    }
}

std::chrono::milliseconds ManualClock::total_slept() const {
    std::lock_guard lock(mu_);
    return slept_;
}

RateLimiter::RateLimiter(int per_minute, Clock& clock) : per_minute_(per_minute), clock_(clock) {
    if (per_minute <= 0) fail(ErrorCode::InvalidArgument, "requests_per_minute must be positive");
}

void RateLimiter::acquire() {
    constexpr std::chrono::milliseconds kWindow{60000};
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = clock_.now();
        while (!window_.empty() && window_.front() + kWindow <= now) window_.pop_front();
        if (static_cast<int>(window_.size()) < per_minute_) {
            window_.push_back(now);
            grants_.push_back(now);
            return;
        }
        const auto wait = window_.front() + kWindow - now;
        lock.unlock();
        clock_.sleep_for(wait);
        lock.lock();
    }
}

std::vector<std::chrono::milliseconds> RateLimiter::grants() const {
    std::lock_guard lock(mu_);
    return grants_;
}

std::chrono::milliseconds backoff_delay(int base_ms, int attempt, std::string_view record_id) {
    // FNV-1a over the id and attempt number.
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 1099511628211ull;
    };
    for (char c : record_id) mix(static_cast<unsigned char>(c));
    for (int i = 0; i < 4; ++i) mix(static_cast<unsigned char>((attempt >> (8 * i)) & 0xFF));
    const double jitter = 1.0 + 0.25 * static_cast<double>(h % 10000) / 10000.0;
    const double ms = static_cast<double>(base_ms) * std::ldexp(1.0, attempt) * jitter;
    return std::chrono::milliseconds(static_cast<long long>(ms));
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
    return out.str();
}

Json to_json(const AttemptLog& a) {
    Json j{{"record_id", a.record_id},   {"prompt_kind", to_string(a.prompt_kind)}, {"attempt", a.attempt},
           {"timestamp", a.timestamp},   {"latency_ms", a.latency_ms},              {"outcome", a.outcome}};
    if (a.http_status != 0) j["http_status"] = a.http_status;
    if (!a.detail.empty()) j["detail"] = a.detail;
    return j;
}

// ---------------------------------------------------------------- dispatch

DispatchResult dispatch(Provider& provider, const RequestEnvelope& envelope, std::span<const std::uint8_t> image,
                        const ProviderConfig& cfg, const DispatchContext& ctx) {
    cfg.validate();
    if (envelope.image() && image.empty()) {
        fail(ErrorCode::InvalidArgument, "record " + envelope.record_id + ": image attachment is empty");
    }
    SystemClock system_clock;
    Clock& clock = ctx.clock ? *ctx.clock : system_clock;
    const RefusalClassifier& refusals = ctx.refusals ? *ctx.refusals : RefusalClassifier::builtin();

    DispatchResult result;
    for (int attempt = 0;; ++attempt) {
        if (ctx.limiter) ctx.limiter->acquire();
        const auto t0 = std::chrono::steady_clock::now();
        AttemptResult r;
        try {
            r = provider.attempt(envelope, image, cfg);
        } catch (const std::exception& e) {
            r = AttemptResult::retryable(FailureKind::TransportError, e.what());
        }
        const auto latency =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
        result.latency_ms += latency;

        // Reclassify successful answers that are empty or refusals.
        if (r.status == AttemptResult::Status::Ok) {
            if (trim(r.text).empty()) {
                r = AttemptResult::terminal(FailureKind::MalformedResponse, "empty response", r.http_status);
            } else if (classify_refusal(r.text, refusals)) {
                auto text = std::move(r.text);
                r = AttemptResult::terminal(FailureKind::Refusal, "refusal pattern matched", r.http_status);
                r.text = std::move(text);
            }
        }

        AttemptLog log{envelope.record_id, envelope.prompt_kind, attempt, utc_timestamp(), latency,
                       r.status == AttemptResult::Status::Ok ? "ok" : std::string(to_string(r.kind)),
                       r.http_status, r.detail};
        if (ctx.on_attempt) ctx.on_attempt(log);
        result.attempts.push_back(std::move(log));

        if (r.status == AttemptResult::Status::Ok) {
            result.raw_text = r.text;
            result.outcome = std::move(r.text);
            result.retry_count = attempt;
            return result;
        }
        const bool retryable = r.status == AttemptResult::Status::Retryable && r.kind != FailureKind::Refusal;
        if (!retryable || attempt >= cfg.max_retries) {
            result.retry_count = attempt;
            result.raw_text = std::move(r.text);
            result.outcome = FailureOutcome{r.kind, r.detail, attempt};
            return result;
        }
        clock.sleep_for(backoff_delay(cfg.backoff_base_ms, attempt, envelope.record_id));
    }
}

}  // namespace elena
