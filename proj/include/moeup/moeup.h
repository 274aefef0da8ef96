/* Copyright 2026 The moeup Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to libmoeup. Every function returns a moeup_status; on failure
 * moeup_last_error() describes the problem for the calling thread. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with moeup_string_free(). Configs are JSON texts in the run-config
 * layout (see moeup_config_keys()).
 */
#ifndef MOEUP_MOEUP_H_
#define MOEUP_MOEUP_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define MOEUP_API __attribute__((visibility("default")))
#else
#define MOEUP_API
#endif

typedef enum moeup_status {
  MOEUP_OK = 0,
  MOEUP_ERR_INTERNAL = 1,
  MOEUP_ERR_CONFIG = 2,
  MOEUP_ERR_IO = 3,
  MOEUP_ERR_VERIFY = 4,
  MOEUP_ERR_FOLDING = 5,
  MOEUP_ERR_NUMERIC = 6
} moeup_status;

typedef struct moeup_checkpoint moeup_checkpoint;

MOEUP_API const char* moeup_version(void);
MOEUP_API const char* moeup_status_name(moeup_status status);
/* Message of the last failed call on this thread; "" if none. */
MOEUP_API const char* moeup_last_error(void);
MOEUP_API void moeup_string_free(char* s);

/* Config handling. `file_json` may be NULL (all defaults); `overrides_json`
 * may be NULL and is merged over the file before validation. */
MOEUP_API moeup_status moeup_config_resolve(const char* file_json, const char* overrides_json,
                                            char** resolved_json);
MOEUP_API moeup_status moeup_config_keys(char** text);

/* Checkpoints. */
MOEUP_API moeup_status moeup_checkpoint_load(const char* dir, moeup_checkpoint** out);
MOEUP_API moeup_status moeup_checkpoint_save(const moeup_checkpoint* ckpt, const char* dir);
MOEUP_API moeup_status moeup_checkpoint_init_dense(const char* config_json,
                                                   moeup_checkpoint** out);
MOEUP_API void moeup_checkpoint_free(moeup_checkpoint* ckpt);
/* {"model": ..., "moe": ... | null, "param_count": n, "tensors": n} */
MOEUP_API moeup_status moeup_checkpoint_info(const moeup_checkpoint* ckpt, char** info_json);
/* Evaluation-mode logits of one sequence into `out` (n * vocab values). */
MOEUP_API moeup_status moeup_checkpoint_logits(const moeup_checkpoint* ckpt,
                                               const int32_t* tokens, size_t n, double* out,
                                               size_t out_len);

/* Upcycling. With upcycle.tp * upcycle.ep > 1 the dense model is sharded,
 * each shard upcycled on its own, and the shards gathered. */
MOEUP_API moeup_status moeup_upcycle(const moeup_checkpoint* dense, const char* config_json,
                                     moeup_checkpoint** out);
/* Whole-model versus gathered-sharded upcycle with the configured tp and ep.
 * MOEUP_ERR_VERIFY when they differ; the report is filled either way. */
MOEUP_API moeup_status moeup_upcycle_verify(const moeup_checkpoint* dense,
                                            const char* config_json, char** report_json);
MOEUP_API moeup_status moeup_verify_equivalence(const moeup_checkpoint* a,
                                                const moeup_checkpoint* b, char** report_json);

/* Planner. `check_folding` is a comma-separated list of group kinds (tp, cp,
 * dp, pp, etp, ep, edp) that must be intra-node, or NULL. Outputs are filled
 * before MOEUP_ERR_FOLDING is returned. Either output may be NULL. */
MOEUP_API moeup_status moeup_plan(const char* config_json, const char* check_folding,
                                  char** report_json, char** table_text);
MOEUP_API moeup_status moeup_flops(const char* config_json, char** report_json);

/* Training. `model` is trained in place. `csv_path` may be NULL; rows are
 * written as steps finish, so a numeric abort leaves the good steps. */
MOEUP_API moeup_status moeup_train(moeup_checkpoint* model, const char* config_json,
                                   const char* run_id, const char* csv_path,
                                   char** summary_json);
MOEUP_API moeup_status moeup_eval(const moeup_checkpoint* model, const char* config_json,
                                  double* perplexity);
/* One <run_id>.csv per swept value is written into `out_dir`. */
MOEUP_API moeup_status moeup_ablate(const moeup_checkpoint* dense, const char* config_json,
                                    const char* out_dir, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* MOEUP_MOEUP_H_ */
