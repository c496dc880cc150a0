#ifndef LINGUALENS_H
#define LINGUALENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdint.h>
#include <stddef.h>

#define LL_OK 0

/**
 * A required pointer argument was null.
 */
#define LL_ERR_NULL_POINTER 1

/**
 * A string argument was not valid UTF-8.
 */
#define LL_ERR_INVALID_UTF8 2

/**
 * Input rejected: bad config, shapes, dataset, arguments.
 */
#define LL_ERR_VALIDATION 3

/**
 * The computation could not complete (I/O, insufficient corruption).
 */
#define LL_ERR_RUNTIME 4

/**
 * Output buffer too small; the required length is still reported.
 */
#define LL_ERR_BUFFER_TOO_SMALL 5

/**
 * A Rust panic was caught at the boundary.
 */
#define LL_ERR_PANIC 6

/**
 * Opaque model handle.
 */
typedef struct LlBundle LlBundle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next library call on the same thread.
 */
const char *ll_last_error(void);

/**
 * Load and validate a bundle directory.
 */
int32_t ll_bundle_load(const char *dir, struct LlBundle **out);

/**
 * Synthesize a seeded toy bundle over the built-in multilingual word list.
 */
int32_t ll_bundle_synthesize(uint64_t seed,
                             size_t n_layers,
                             size_t d_model,
                             size_t n_heads,
                             size_t d_ff,
                             size_t max_seq,
                             struct LlBundle **out);

/**
 * Write the bundle directory.
 */
int32_t ll_bundle_save(const struct LlBundle *bundle, const char *dir);

/**
 * Release a bundle. Null is ignored.
 */
void ll_bundle_free(struct LlBundle *bundle);

/**
 * Layer count, width and vocabulary size.
 */
int32_t ll_bundle_shape(const struct LlBundle *bundle,
                        size_t *n_layers,
                        size_t *d_model,
                        size_t *vocab_size);

/**
 * Content hash (hex SHA-256). Free with `ll_string_free`.
 */
int32_t ll_bundle_hash(const struct LlBundle *bundle, char **out);

/**
 * Tokenize `text` into `ids[0..cap]`. `*len` receives the token count
 * even when the buffer is too small.
 */
int32_t ll_tokenize(const struct LlBundle *bundle,
                    const char *text,
                    uint32_t *ids,
                    size_t cap,
                    size_t *len);

/**
 * Next-token logits at the final position of `ids[0..n]`, written to
 * `logits[0..cap]`; `*len` receives the vocabulary size.
 */
int32_t ll_forward_logits(const struct LlBundle *bundle,
                          const uint32_t *ids,
                          size_t n,
                          double *logits,
                          size_t cap,
                          size_t *len);

/**
 * Greedy generation; `*json` receives the generation record.
 */
int32_t ll_generate(const struct LlBundle *bundle,
                    const char *prompt,
                    size_t max_steps,
                    char **json);

/**
 * Generate, then decode every (layer, step) state; `*json` receives the
 * lens grid.
 */
int32_t ll_lens_grid(const struct LlBundle *bundle,
                     const char *prompt,
                     size_t max_steps,
                     size_t k,
                     char **json);

/**
 * Causal trace with default thresholds; `*json` receives the AIE grid.
 * `subject` must occur in `prompt`; `answer` is the exact answer token
 * text (usually with a leading space).
 */
int32_t ll_trace_grid(const struct LlBundle *bundle,
                      const char *prompt,
                      const char *subject,
                      const char *answer,
                      size_t n_seeds,
                      uint64_t seed,
                      char **json);

/**
 * Release a string returned by this library. Null is ignored.
 */
void ll_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINGUALENS_H */
