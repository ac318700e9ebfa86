#ifndef DETFLOW_H
#define DETFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfRunStatus {
  DF_RUN_STATUS_COMPLETED = 0,
  DF_RUN_STATUS_FAILED = 1,
  DF_RUN_STATUS_STALLED = 2,
  DF_RUN_STATUS_INTERRUPTED = 3,
} DfRunStatus;

/**
 * Result code of every fallible `df_*` call. The message for the most
 * recent failure on the calling thread is available from `df_last_error`.
 */
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_ARGUMENT = 1,
  DF_STATUS_INVALID_UTF8 = 2,
  DF_STATUS_PARSE = 3,
  DF_STATUS_SCHEMA = 4,
  DF_STATUS_DUPLICATE_TOOL = 5,
  DF_STATUS_UNKNOWN_BUILTIN = 6,
  DF_STATUS_BUILD = 7,
  DF_STATUS_VALIDATION_FAILED = 8,
  DF_STATUS_BINDING = 9,
  DF_STATUS_SCHEMA_VIOLATION = 10,
  DF_STATUS_CHECKPOINT = 11,
  DF_STATUS_IO = 12,
  DF_STATUS_ENGINE = 13,
  DF_STATUS_PANIC = 14,
} DfStatus;

/**
 * A workflow under construction.
 */
typedef struct DfBuilder DfBuilder;

/**
 * Registered tools, native builtins and host callables alike.
 */
typedef struct DfRegistry DfRegistry;

/**
 * Where a host tool leaves its answer.
 */
typedef struct DfReply DfReply;

/**
 * The outcome of one run.
 */
typedef struct DfResult DfResult;

/**
 * A built or loaded workflow with its tool bindings.
 */
typedef struct DfWorkflow DfWorkflow;

/**
 * Host tool entry point. Receives the arguments as a JSON object and must
 * answer through `df_reply_ok` or `df_reply_error` before returning.
 */
typedef int32_t (*DfToolFn)(void *user_data, const char *args_json, struct DfReply *reply);

/**
 * Releases `user_data` once the tool is dropped.
 */
typedef void (*DfFreeFn)(void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void df_string_free(char *s);

/**
 * Library version, statically allocated.
 */
const char *df_version(void);

/**
 * Decodes `value_json` as a value of `type_json` and encodes it again.
 * Host bindings use this to check that values survive the boundary.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum DfStatus df_value_roundtrip(const char *type_json, const char *value_json, char **out);

struct DfRegistry *df_registry_new(void);

/**
 * # Safety
 * `reg` must come from `df_registry_new` and not have been freed.
 */
void df_registry_free(struct DfRegistry *reg);

/**
 * Registers builtin `name` as tool `id`. `params_json` may be NULL.
 *
 * # Safety
 * `reg` must be a live registry; strings must be NUL-terminated.
 */
enum DfStatus df_registry_add_builtin(struct DfRegistry *reg,
                                      const char *id,
                                      const char *name,
                                      const char *params_json);

/**
 * Registers a host callable as tool `name`. Unless `reentrant` is set, calls
 * to this tool are serialized. `free_user_data`, if given, runs once when
 * the last copy of the tool is dropped; that can be on an engine thread
 * shortly after `df_registry_free` returns.
 *
 * # Safety
 * `reg` must be a live registry; strings must be NUL-terminated; `callback`
 * must be safe to call from any thread with `user_data`.
 */
enum DfStatus df_registry_register_tool(struct DfRegistry *reg,
                                        const char *name,
                                        const char *input_schema_json,
                                        const char *output_schema_json,
                                        DfToolFn callback,
                                        void *user_data,
                                        DfFreeFn free_user_data,
                                        bool reentrant);

/**
 * Sets a host tool's result to `json`.
 *
 * # Safety
 * `reply` must be the pointer passed to the callback; `json` NUL-terminated.
 */
enum DfStatus df_reply_ok(struct DfReply *reply, const char *json);

/**
 * Marks a host tool call as failed with `message`.
 *
 * # Safety
 * `reply` must be the pointer passed to the callback; `message` NUL-terminated.
 */
enum DfStatus df_reply_error(struct DfReply *reply, const char *message);

/**
 * # Safety
 * Strings must be NUL-terminated. Returns NULL if either is invalid.
 */
struct DfBuilder *df_builder_new(const char *name, const char *version);

/**
 * # Safety
 * `b` must come from `df_builder_new` and not have been freed.
 */
void df_builder_free(struct DfBuilder *b);

/**
 * Declares state key `key` of type `type_json`.
 *
 * # Safety
 * `b` must be a live builder; strings must be NUL-terminated.
 */
enum DfStatus df_builder_state(struct DfBuilder *b, const char *key, const char *type_json);

/**
 * Adds node `id`. `kind_json` is a node body as in workflow files, e.g.
 * `{"type": "tool", "fn_ref": "add", "input_schema": {...}, "output_schema": {...}}`.
 *
 * # Safety
 * `b` must be a live builder; strings must be NUL-terminated.
 */
enum DfStatus df_builder_node(struct DfBuilder *b, const char *id, const char *kind_json);

/**
 * Connects `src` to `dst`. `field_map_json` maps source fields to target
 * fields; NULL makes an ordering-only edge. `transform` may be NULL.
 *
 * # Safety
 * `b` must be a live builder; strings must be NUL-terminated.
 */
enum DfStatus df_builder_connect(struct DfBuilder *b,
                                 const char *src,
                                 const char *dst,
                                 const char *field_map_json,
                                 const char *transform);

/**
 * Builds and validates against `reg` (NULL means no tools). On
 * `ValidationFailed` the message lists every finding. The builder is spent
 * either way but must still be freed.
 *
 * # Safety
 * `b` must be a live builder; `reg` NULL or live; `out` writable.
 */
enum DfStatus df_builder_build(struct DfBuilder *b,
                               const struct DfRegistry *reg,
                               struct DfWorkflow **out);

/**
 * Loads and validates a workflow file. Foreign bindings resolve against
 * `reg`, which may be NULL when the file binds only builtins.
 *
 * # Safety
 * `path` must be NUL-terminated; `reg` NULL or live; `out` writable.
 */
enum DfStatus df_workflow_load(const char *path,
                               const struct DfRegistry *reg,
                               struct DfWorkflow **out);

/**
 * Writes the workflow file. Tools used by the graph that are registered in
 * `reg` and not yet bound are bound as builtin or foreign accordingly.
 *
 * # Safety
 * `wf` must be live; `reg` NULL or live; `path` NUL-terminated.
 */
enum DfStatus df_workflow_save(struct DfWorkflow *wf,
                               const struct DfRegistry *reg,
                               const char *path);

/**
 * Canonical graph hash as lowercase hex.
 *
 * # Safety
 * `wf` must be live. Returns NULL for a NULL handle.
 */
char *df_workflow_hash(const struct DfWorkflow *wf);

/**
 * The workflow document as JSON.
 *
 * # Safety
 * `wf` must be live. Returns NULL for a NULL handle.
 */
char *df_workflow_to_json(const struct DfWorkflow *wf);

/**
 * # Safety
 * `wf` must come from this library and not have been freed.
 */
void df_workflow_free(struct DfWorkflow *wf);

/**
 * Runs the workflow. `initial_state_json` (an object over the state schema)
 * and `config_json` may be NULL. A run that fails inside the workflow still
 * returns `Ok` with a result whose status says so.
 *
 * # Safety
 * `wf` live; `reg` NULL or live; strings NUL-terminated; `out` writable.
 */
enum DfStatus df_run(const struct DfWorkflow *wf,
                     const struct DfRegistry *reg,
                     const char *initial_state_json,
                     const char *config_json,
                     struct DfResult **out);

/**
 * Continues from a checkpoint written by an earlier run of the same workflow.
 *
 * # Safety
 * As for `df_run`; `checkpoint_path` must be NUL-terminated.
 */
enum DfStatus df_resume(const struct DfWorkflow *wf,
                        const struct DfRegistry *reg,
                        const char *checkpoint_path,
                        const char *config_json,
                        struct DfResult **out);

/**
 * # Safety
 * `r` must be a live result.
 */
enum DfRunStatus df_result_status(const struct DfResult *r);

/**
 * Final state as canonical JSON.
 *
 * # Safety
 * `r` must be a live result.
 */
char *df_result_final_state(const struct DfResult *r);

/**
 * # Safety
 * `r` must be a live result.
 */
char *df_result_trace_digest(const struct DfResult *r);

/**
 * Trace as line-delimited JSON.
 *
 * # Safety
 * `r` must be a live result.
 */
char *df_result_trace(const struct DfResult *r);

/**
 * # Safety
 * `r` must be a live result.
 */
char *df_result_metrics(const struct DfResult *r);

/**
 * Failure description, or NULL when the run did not fail.
 *
 * # Safety
 * `r` must be a live result.
 */
char *df_result_error(const struct DfResult *r);

/**
 * # Safety
 * `r` must come from this library and not have been freed.
 */
void df_result_free(struct DfResult *r);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next `df_*` call on the same thread.
 */
const char *df_last_error(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* DETFLOW_H */
