/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the TIMAR library: synthetic data generation, training,
 * turn-wise streaming generation and evaluation of dyadic head motion.
 *
 * Every function returning timar_status sets a thread-local message readable
 * through timar_last_error() when it fails. Strings returned through char**
 * out-parameters are owned by the caller and released with timar_free().
 */
#ifndef TIMAR_H
#define TIMAR_H

#include <stddef.h>
#include <stdint.h>

#if defined(TIMAR_BUILDING)
#define TIMAR_API __attribute__((visibility("default")))
#else
#define TIMAR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum timar_status {
  TIMAR_OK = 0,
  TIMAR_ERR_VALIDATION = 1, /* bad argument, config or file content */
  TIMAR_ERR_IO = 2,         /* unreadable / unwritable path */
  TIMAR_ERR_NUMERIC = 3,    /* non-finite activation or loss */
  TIMAR_ERR_INTERNAL = 4
} timar_status;

#define TIMAR_HEAD_DIM 56

TIMAR_API const char* timar_version(void);
/* Message of the last failure on this thread; empty after success. */
TIMAR_API const char* timar_last_error(void);
TIMAR_API void timar_free(char* s);

/* Validates a key=value config file (NULL: defaults) and returns it fully
 * expanded. */
TIMAR_API timar_status timar_config_expand(const char* config_path, char** out_text);

/* ---- datasets ---------------------------------------------------------- */

TIMAR_API timar_status timar_gen_dataset(const char* out_dir, int n_train, int n_val, int n_test,
                                         uint64_t seed);
/* Number of dialogues of `split` ("train", "val", "test") in a dataset. */
TIMAR_API timar_status timar_dataset_count(const char* data_dir, const char* split,
                                           size_t* out_count);

/* ---- training ---------------------------------------------------------- */

typedef struct timar_trainer timar_trainer;

typedef struct timar_train_record {
  int64_t step; /* completed updates */
  int64_t epoch;
  double loss;
  double exp;
  double jaw;
  double pose;
  double lr;
} timar_train_record;

/* Fresh trainer over the train split of data_dir. config_path may be NULL. */
TIMAR_API timar_status timar_trainer_create(const char* config_path, const char* data_dir,
                                            uint64_t seed, timar_trainer** out);
/* Continues from a checkpoint written by timar_trainer_save. */
TIMAR_API timar_status timar_trainer_resume(const char* checkpoint_path, const char* data_dir,
                                            timar_trainer** out);
TIMAR_API timar_status timar_trainer_step(timar_trainer* t, timar_train_record* out);
TIMAR_API timar_status timar_trainer_save(const timar_trainer* t, const char* path);
TIMAR_API int64_t timar_trainer_steps_done(const timar_trainer* t);
TIMAR_API void timar_trainer_destroy(timar_trainer* t);

/* ---- inference --------------------------------------------------------- */

typedef struct timar_model timar_model;

TIMAR_API timar_status timar_model_load(const char* checkpoint_path, timar_model** out);
TIMAR_API timar_status timar_model_config(const timar_model* m, char** out_text);
/* Frames per turn and audio samples per turn of the loaded model. */
TIMAR_API int timar_model_turn_frames(const timar_model* m);
TIMAR_API int timar_model_turn_samples(const timar_model* m);
TIMAR_API void timar_model_destroy(timar_model* m);

/* Generates agent motion for every dialogue of a split with `context_n`
 * history turns and guidance scale `omega`, writing `{id}.tmr` (array
 * `agent_head`) and `{id}.json` per dialogue into out_dir. steps <= 0 uses
 * the configured sampler steps. Dialogues are distributed over `workers`
 * threads; results do not depend on the worker count. */
TIMAR_API timar_status timar_sample_split(const timar_model* m, const char* data_dir,
                                          const char* split, int context_n, double omega,
                                          int steps, uint64_t seed, int workers,
                                          const char* out_dir);

typedef struct timar_conversation timar_conversation;

/* Streaming session: feed one turn at a time, receive the agent's motion. */
TIMAR_API timar_status timar_conversation_create(const timar_model* m, int context_n,
                                                 double omega, int steps, uint64_t seed,
                                                 timar_conversation** out);
/* user_wave / agent_wave hold timar_model_turn_samples() samples,
 * user_head holds timar_model_turn_frames() x 56 values (row-major);
 * out_agent_head receives the same number of values. */
TIMAR_API timar_status timar_conversation_push(timar_conversation* c, const float* user_wave,
                                               const float* agent_wave, const double* user_head,
                                               double* out_agent_head);
TIMAR_API void timar_conversation_destroy(timar_conversation* c);

/* ---- evaluation -------------------------------------------------------- */

/* Scores every `{id}.tmr` in generated_dir against the split's ground truth.
 * The report is a JSON object with per-component fd, pfd, mse, sid, rpcc and
 * the MSE of always predicting the train-split mean. */
TIMAR_API timar_status timar_evaluate(const char* data_dir, const char* split,
                                      const char* generated_dir, uint64_t seed,
                                      char** out_json);

/* ---- archives ---------------------------------------------------------- */

/* JSON description (entries and metadata) of any TMR1 archive. */
TIMAR_API timar_status timar_archive_describe(const char* path, char** out_json);
/* 64-bit FNV-1a content fingerprint of a file, as 16 hex digits. */
TIMAR_API timar_status timar_file_hash(const char* path, char** out_hex);

#ifdef __cplusplus
}
#endif

#endif /* TIMAR_H */
