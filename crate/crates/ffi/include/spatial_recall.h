#ifndef SPATIAL_RECALL_H
#define SPATIAL_RECALL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_INVALID_ARGUMENT = 1,
  SR_STATUS_NOT_FOUND = 2,
  SR_STATUS_CONFLICT = 3,
  SR_STATUS_GATED = 4,
  SR_STATUS_PERSISTENCE = 5,
  SR_STATUS_CORRUPT_RECORD = 6,
  SR_STATUS_MIGRATION = 7,
  SR_STATUS_MISSING_CONTEXT = 8,
  SR_STATUS_UNANSWERABLE = 9,
  SR_STATUS_TRANSPORT = 10,
  SR_STATUS_MALFORMED_OUTPUT = 11,
  SR_STATUS_UNSUPPORTED_INPUT = 12,
  SR_STATUS_REVISION_UNAVAILABLE = 13,
  SR_STATUS_PRECONDITION = 14,
  SR_STATUS_WRONG_ENDPOINT = 15,
  SR_STATUS_CONFIG = 16,
  /**
   * A required pointer argument was NULL.
   */
  SR_STATUS_NULL_POINTER = 17,
  /**
   * A string argument was not valid UTF-8.
   */
  SR_STATUS_INVALID_UTF8 = 18,
  /**
   * The library panicked; the engine may be unusable.
   */
  SR_STATUS_PANIC = 19,
} SrStatus;

/**
 * Opaque engine handle.
 */
typedef struct SrEngine SrEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an engine. `config_path` names an optional TOML settings file and
 * `data_dir` overrides its data directory; either may be NULL. Environment
 * variables prefixed `SPATIAL_RECALL_` apply as for the CLI.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated. `out` must be writable.
 */
enum SrStatus sr_engine_open(const char *config_path, const char *data_dir, struct SrEngine **out);

/**
 * Compacts the loaded corpora and releases the engine. NULL is a no-op.
 *
 * # Safety
 * `engine` must come from [`sr_engine_open`] and not be used afterwards.
 */
void sr_engine_free(struct SrEngine *engine);

/**
 * Compacts every loaded corpus and pending queue to disk.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum SrStatus sr_engine_flush(const struct SrEngine *engine);

/**
 * Answers, queues a note, or starts a removal, depending on how the
 * utterance classifies. `capture_json` is a capture body; `*out` receives
 * the outcome.
 *
 * # Safety
 * `engine` must be a live handle, `capture_json` NUL-terminated, `out` writable.
 */
enum SrStatus sr_query(const struct SrEngine *engine, const char *capture_json, char **out);

/**
 * Queues a note for confirmation. Fails with `WrongEndpoint` when the
 * utterance is not a note.
 *
 * # Safety
 * As for [`sr_query`].
 */
enum SrStatus sr_remember(const struct SrEngine *engine, const char *capture_json, char **out);

/**
 * Queues a removal for confirmation.
 *
 * # Safety
 * As for [`sr_query`].
 */
enum SrStatus sr_forget(const struct SrEngine *engine, const char *request_json, char **out);

/**
 * Accepts or rejects a pending entry.
 *
 * # Safety
 * As for [`sr_query`].
 */
enum SrStatus sr_verify(const struct SrEngine *engine, const char *request_json, char **out);

/**
 * Lists a user's memories, oldest first, without embeddings.
 *
 * # Safety
 * `engine` must be a live handle, `user_id` NUL-terminated, `out` writable.
 */
enum SrStatus sr_memories(const struct SrEngine *engine, const char *user_id, char **out);

/**
 * Lists a user's unexpired pending entries.
 *
 * # Safety
 * As for [`sr_memories`].
 */
enum SrStatus sr_pending(const struct SrEngine *engine, const char *user_id, char **out);

/**
 * Stores every memory of a persona file. `*count` receives the number stored.
 *
 * # Safety
 * `engine` must be a live handle, `persona_path` NUL-terminated, `count`
 * writable or NULL.
 */
enum SrStatus sr_seed(const struct SrEngine *engine, const char *persona_path, size_t *count);

/**
 * Releases a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sr_string_free(char *s);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call on this thread; do not free.
 */
const char *sr_last_error(void);

/**
 * Whitespace-separated word count, or -1 for NULL or non-UTF-8 input.
 *
 * # Safety
 * `text` must be NULL or NUL-terminated.
 */
int64_t sr_word_count(const char *text);

/**
 * Great-circle distance in meters.
 */
double sr_haversine_m(double lat1, double lon1, double lat2, double lon2);

/**
 * Percentage decrease in words from a full utterance to a partial one.
 *
 * # Safety
 * `out` must be writable.
 */
enum SrStatus sr_reduction_percent(size_t full_words, size_t partial_words, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIAL_RECALL_H */
