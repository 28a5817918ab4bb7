#ifndef BINADV_H
#define BINADV_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum BinadvStatus {
  BINADV_STATUS_OK = 0,
  BINADV_STATUS_NULL_POINTER = 1,
  BINADV_STATUS_INVALID_UTF8 = 2,
  BINADV_STATUS_INVALID_ARGUMENT = 3,
  BINADV_STATUS_IO = 4,
  BINADV_STATUS_CONFIG = 5,
  BINADV_STATUS_CORPUS = 6,
  BINADV_STATUS_MODEL = 7,
  BINADV_STATUS_ATTACK = 8,
  BINADV_STATUS_PANIC = 9,
} BinadvStatus;

typedef enum BinadvFamily {
  BINADV_FAMILY_ACFG_GNN = 0,
  BINADV_FAMILY_GRAPH_MATCHER = 1,
  BINADV_FAMILY_SEQ_EMBED = 2,
} BinadvFamily;

typedef enum BinadvAttack {
  BINADV_ATTACK_GREEDY = 0,
  BINADV_ATTACK_GRAYBOX_GREEDY = 1,
  BINADV_ATTACK_SPATIAL = 2,
  BINADV_ATTACK_GCAM = 3,
} BinadvAttack;

typedef enum BinadvMode {
  BINADV_MODE_TARGETED = 0,
  BINADV_MODE_UNTARGETED = 1,
} BinadvMode;

/**
 * A corpus with a model and optional embedding table.
 */
typedef struct BinadvSession BinadvSession;

/**
 * Attack parameters. Start from [`binadv_attack_params_default`].
 */
typedef struct BinadvAttackParams {
  enum BinadvAttack attack;
  enum BinadvMode mode;
  /**
   * Budget level 1..=4.
   */
  uint32_t setting;
  /**
   * Success threshold; NaN selects the default of the mode.
   */
  double tau;
  double epsilon;
  double r;
  size_t c;
  size_t topk;
  size_t cand;
  /**
   * GCAM iterations; 0 selects the per-family default.
   */
  size_t gcam_iters;
  uint64_t seed;
} BinadvAttackParams;

typedef struct BinadvAttackResult {
  bool success;
  double initial_sim;
  double final_sim;
  size_t inserted;
  size_t iterations;
} BinadvAttackResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *binadv_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call on this thread.
 */
const char *binadv_last_error(void);

/**
 * Opens a session. `embeddings` and `weights` may be null; without weights
 * the model is initialized from `seed`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum BinadvStatus binadv_session_open(const char *corpus,
                                      const char *embeddings,
                                      const char *weights,
                                      enum BinadvFamily model,
                                      uint64_t seed,
                                      struct BinadvSession **out);

/**
 * # Safety
 * `s` must be null or a handle from [`binadv_session_open`] not yet freed.
 */
void binadv_session_free(struct BinadvSession *s);

/**
 * Number of functions in the session corpus, 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live session.
 */
size_t binadv_session_len(const struct BinadvSession *s);

/**
 * Copies the name of function `i` into `buf` (NUL-terminated, truncated to
 * `cap`) and stores the untruncated length in `len`.
 *
 * # Safety
 * `buf` must hold `cap` bytes or be null with `cap == 0`; `len` may be null.
 */
enum BinadvStatus binadv_session_name(const struct BinadvSession *s,
                                      size_t i,
                                      char *buf,
                                      size_t cap,
                                      size_t *len);

/**
 * Similarity in `[0, 1]` of functions `i` and `j`.
 *
 * # Safety
 * `s` must be a live session and `out` writable.
 */
enum BinadvStatus binadv_similarity(const struct BinadvSession *s, size_t i, size_t j, double *out);

struct BinadvAttackParams binadv_attack_params_default(void);

/**
 * Attacks the pair (`source`, `target`) of the session corpus.
 *
 * # Safety
 * `s` must be a live session, `params` readable and `out` writable.
 */
enum BinadvStatus binadv_attack(const struct BinadvSession *s,
                                const struct BinadvAttackParams *params,
                                size_t source,
                                size_t target,
                                struct BinadvAttackResult *out);

/**
 * Runs an experiment grid described by a JSON run configuration and writes
 * its reports to the configured output directory. `cells`, when not null,
 * receives the number of grid cells.
 *
 * # Safety
 * `config_json` must be NUL-terminated; `cells` may be null.
 */
enum BinadvStatus binadv_run_experiment(const char *config_json, int *cells);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINADV_H */
