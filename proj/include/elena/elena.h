/* C interface to the elena library.
 *
 * Commands take a JSON request string and, on success or partial success,
 * hand back a JSON result through `result_json`, which the caller releases
 * with elena_string_free. On failure the message is available from
 * elena_last_error() on the calling thread.
 */
#ifndef ELENA_ELENA_H
#define ELENA_ELENA_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ELENA_API __declspec(dllexport)
#else
#define ELENA_API __attribute__((visibility("default")))
#endif

typedef enum elena_status {
    ELENA_OK = 0,
    ELENA_PARTIAL = 1000, /* completed, but some records failed or were skipped */
    ELENA_E_INVALID_ARGUMENT = 1,
    ELENA_E_IO = 2,
    ELENA_E_PARSE = 3,
    ELENA_E_UNKNOWN_LABEL = 4,
    ELENA_E_MISSING_FIELD = 5,
    ELENA_E_NO_JSON_FOUND = 6,
    ELENA_E_UNREPAIRABLE_JSON = 7,
    ELENA_E_UNMAPPED_SOURCE_LABEL = 8,
    ELENA_E_DUPLICATE_RECORD_ID = 9,
    ELENA_E_MISSING_IMAGE = 10,
    ELENA_E_SCHEMA = 11,
    ELENA_E_ANNOTATION_PARSE = 12,
    ELENA_E_MODEL_LOAD = 13,
    ELENA_E_INFERENCE = 14,
    ELENA_E_ATTACHMENT_MISSING = 15,
    ELENA_E_FIXTURE_LOAD = 16,
    ELENA_E_EMPTY_MATRIX = 17,
    ELENA_E_HEADER_MISMATCH = 18,
    ELENA_E_TRUNCATED_FILE = 19,
    ELENA_E_ZERO_MASS_GRID = 20,
    ELENA_E_GEOMETRY_MISMATCH = 21,
    ELENA_E_PAIRING_MISMATCH = 22,
    ELENA_E_MISSING_RUN = 23,
    ELENA_E_CONFIG_MISMATCH = 24,
    ELENA_E_WRITE = 25,
    ELENA_E_NO_AGENT_MATCHED = 26,
    ELENA_E_INTERNAL = 99
} elena_status;

typedef struct elena_context elena_context;

ELENA_API const char* elena_version(void);
ELENA_API const char* elena_status_name(elena_status status);

/* Message for the last failed call on this thread; "" when none. */
ELENA_API const char* elena_last_error(void);
ELENA_API void elena_string_free(char* s);

/* config_path may be NULL for built-in defaults. */
ELENA_API elena_status elena_context_new(const char* config_path, elena_context** out);
ELENA_API void elena_context_free(elena_context* ctx);

/* Pipeline commands. See the README for request keys. */
ELENA_API elena_status elena_ingest(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_mask(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_run(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_two_step(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_evaluate(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_compare(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_attention_analyze(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_report_render(elena_context* ctx, const char* request_json, char** result_json);
ELENA_API elena_status elena_batch(elena_context* ctx, const char* request_json, char** result_json);

/* Single-response helpers.
 * prompt_kind: "naive", "elena", "two_step_describe" or "two_step_parse".
 * Result: {"output": {...}} or {"failure": {...}}. */
ELENA_API elena_status elena_parse_response(const char* raw, const char* prompt_kind, char** result_json);
/* taxonomy: "emotic", "heco", "besst" or "generic". Result: the target label. */
ELENA_API elena_status elena_map_label(elena_context* ctx, const char* taxonomy, const char* source_label,
                                       char** result);

#ifdef __cplusplus
}
#endif

#endif /* ELENA_ELENA_H */
