#include "elena/elena.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "elena/error.hpp"
#include "elena/label_atlas.hpp"
#include "elena/pipeline.hpp"

struct elena_context {
    elena::AppConfig app;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
elena_status guarded(Fn fn) {
    g_last_error.clear();
    try {
        return fn();
    } catch (const elena::Error& e) {
        g_last_error = std::string(elena::error_code_name(e.code())) + ": " + e.what();
        return static_cast<elena_status>(static_cast<int>(e.code()));
    } catch (const nlohmann::json::exception& e) {
        g_last_error = std::string("InvalidArgument: ") + e.what();
        return ELENA_E_INVALID_ARGUMENT;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = std::string("Io: ") + e.what();
        return ELENA_E_IO;
    } catch (const std::exception& e) {
        g_last_error = std::string("Internal: ") + e.what();
        return ELENA_E_INTERNAL;
    } catch (...) {
        g_last_error = "Internal: unknown exception";
        return ELENA_E_INTERNAL;
    }
}

elena::Json parse_request(const char* request_json) {
    if (!request_json) elena::fail(elena::ErrorCode::InvalidArgument, "request is NULL");
    auto j = elena::Json::parse(request_json, nullptr, false);
    if (j.is_discarded() || !j.is_object()) elena::fail(elena::ErrorCode::InvalidArgument, "request is not a JSON object");
    return j;
}

elena_status deliver(const elena::CommandResult& r, char** result_json) {
    elena::Json out = r.summary;
    out["status"] = r.status;
    out["warnings"] = r.warnings;
    if (result_json) *result_json = dup_string(out.dump());
    return r.status == 0 ? ELENA_OK : ELENA_PARTIAL;
}

template <typename Fn>
elena_status command(elena_context* ctx, const char* request_json, char** result_json, Fn fn) {
    if (result_json) *result_json = nullptr;
    return guarded([&] {
        if (!ctx) elena::fail(elena::ErrorCode::InvalidArgument, "context is NULL");
        const auto req = parse_request(request_json);
        return deliver(fn(ctx->app, req), result_json);
    });
}

}  // namespace

extern "C" {

const char* elena_version(void) { return "0.1.0"; }

const char* elena_status_name(elena_status status) {
    switch (status) {
        case ELENA_OK: return "Ok";
        case ELENA_PARTIAL: return "Partial";
        case ELENA_E_INTERNAL: return "Internal";
        default: break;
    }
    const int code = static_cast<int>(status);
    if (code >= 1 && code <= 26) return elena::error_code_name(static_cast<elena::ErrorCode>(code)).data();
    return "Unknown";
}

const char* elena_last_error(void) { return g_last_error.c_str(); }

void elena_string_free(char* s) { std::free(s); }

elena_status elena_context_new(const char* config_path, elena_context** out) {
    return guarded([&] {
        if (!out) elena::fail(elena::ErrorCode::InvalidArgument, "out is NULL");
        *out = nullptr;
        auto ctx = std::make_unique<elena_context>();
        std::optional<std::filesystem::path> path;
        if (config_path && *config_path) path = config_path;
        ctx->app = elena::load_app_config(path);
        *out = ctx.release();
        return ELENA_OK;
    });
}

void elena_context_free(elena_context* ctx) { delete ctx; }

elena_status elena_ingest(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig&, const elena::Json& req) {
        return elena::cmd_ingest(elena::ingest_options_from_json(req));
    });
}

elena_status elena_mask(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig& app, const elena::Json& req) {
        return elena::cmd_mask(elena::mask_options_from_json(req, app));
    });
}

elena_status elena_run(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig& app, const elena::Json& req) {
        return elena::cmd_run(elena::run_options_from_json(req, app));
    });
}

elena_status elena_two_step(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig& app, const elena::Json& req) {
        auto options = elena::run_options_from_json(req, app);
        options.config.prompt_kind = elena::PromptKind::TwoStepParse;
        return elena::cmd_two_step(options);
    });
}

elena_status elena_evaluate(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig& app, const elena::Json& req) {
        return elena::cmd_evaluate(elena::evaluate_options_from_json(req, app));
    });
}

elena_status elena_compare(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig&, const elena::Json& req) {
        return elena::cmd_compare(elena::compare_options_from_json(req));
    });
}

elena_status elena_attention_analyze(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig& app, const elena::Json& req) {
        return elena::cmd_attention_analyze(elena::attention_options_from_json(req, app));
    });
}

elena_status elena_report_render(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig&, const elena::Json& req) {
        return elena::cmd_report_render(elena::render_options_from_json(req));
    });
}

elena_status elena_batch(elena_context* ctx, const char* request_json, char** result_json) {
    return command(ctx, request_json, result_json, [](const elena::AppConfig&, const elena::Json& req) {
        return elena::cmd_batch(elena::batch_options_from_json(req));
    });
}

elena_status elena_parse_response(const char* raw, const char* prompt_kind, char** result_json) {
    if (result_json) *result_json = nullptr;
    return guarded([&] {
        if (!raw || !prompt_kind) elena::fail(elena::ErrorCode::InvalidArgument, "raw and prompt_kind are required");
        const auto parsed = elena::parse_capture(raw, elena::parse_prompt_kind(prompt_kind));
        elena::Json out;
        if (const auto* o = std::get_if<elena::ElenaOutput>(&parsed)) {
            out["output"] = elena::to_json(*o);
        } else {
            out["failure"] = elena::to_json(std::get<elena::FailureOutcome>(parsed));
        }
        if (result_json) *result_json = dup_string(out.dump());
        return ELENA_OK;
    });
}

elena_status elena_map_label(elena_context* ctx, const char* taxonomy, const char* source_label, char** result) {
    if (result) *result = nullptr;
    return guarded([&] {
        if (!ctx || !taxonomy || !source_label) elena::fail(elena::ErrorCode::InvalidArgument, "NULL argument");
        const auto assets = ctx->app.assets_dir ? elena::AssetStore(*ctx->app.assets_dir) : elena::AssetStore();
        const auto map = elena::TaxonomyMap::load(elena::parse_taxonomy(taxonomy), assets);
        const auto label = elena::map_label(source_label, map);
        if (result) *result = dup_string(std::string(elena::to_string(label)));
        return ELENA_OK;
    });
}

}  // extern "C"
