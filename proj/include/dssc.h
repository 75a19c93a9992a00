#ifndef DSSC_H
#define DSSC_H

/* C interface to the dysarthric-speech severity classifier. Every entry
 * point returns a status code; DSSC_OK is success and anything else names
 * the failure category, with the detail message available from
 * dssc_last_error() on the calling thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dssc_status {
  DSSC_OK = 0,
  DSSC_E_INVALID_ARGUMENT = 1,
  DSSC_E_SHAPE_MISMATCH = 2,
  DSSC_E_IO = 3,
  DSSC_E_FORMAT = 4,
  DSSC_E_NOT_FOUND = 5,
  DSSC_E_CONFIG = 6,
  DSSC_E_NUMERIC = 7,
  DSSC_E_UNSUPPORTED = 8,
  DSSC_E_INTERNAL = 9
} dssc_status;

/* Library version, "major.minor.patch". */
const char* dssc_version(void);

/* Short name of a status category, e.g. "config". */
const char* dssc_status_name(dssc_status status);

/* Message of the most recent failure on this thread; "" after a success. */
const char* dssc_last_error(void);

/* Optional knobs shared by the sweep commands. Zero-initialize, then set
 * what you need; NULL pointers mean "use the config file's value". */
typedef struct dssc_run_options {
  const char* plan_id;      /* run one split plan instead of the sweep */
  int jobs;                 /* worker threads; <= 0 means 1 */
  int has_seed;             /* nonzero: seed replaces the config seed */
  unsigned long long seed;
  const char* out_dir;      /* overrides the config out dir */
  const char* cache_dir;    /* overrides config and DSSC_CACHE */
  int verbose;              /* per-item progress on stdout */
} dssc_run_options;

/* Generate a synthetic corpus from a spec file. n_files_out (optional)
 * receives the number of WAV files written. */
dssc_status dssc_synth(const char* spec_path, const char* out_dir,
                       int has_seed, unsigned long long seed,
                       int* n_files_out);

/* Cache mel features for every utterance of the config's corpus. */
dssc_status dssc_preprocess(const char* config_path,
                            const dssc_run_options* options,
                            int64_t* n_utterances_out);

/* Write the split plan files for the config's protocol. */
dssc_status dssc_splits(const char* config_path,
                        const dssc_run_options* options, int* n_plans_out);

/* Train one model per split plan (from scratch, or from the config's
 * pretrain checkpoint for finetune). The optional outputs receive the
 * final-epoch training loss and accuracy averaged over plans. */
dssc_status dssc_train(const char* config_path,
                       const dssc_run_options* options,
                       double* mean_final_loss_out,
                       double* mean_final_accuracy_out);
dssc_status dssc_finetune(const char* config_path,
                          const dssc_run_options* options,
                          double* mean_final_loss_out,
                          double* mean_final_accuracy_out);

/* Score the checkpoints a training sweep produced. The optional outputs
 * receive the aggregate test accuracy and macro F1. */
dssc_status dssc_eval(const char* config_path,
                      const dssc_run_options* options,
                      double* mean_accuracy_out, double* macro_f1_out);

/* Train + eval each architecture preset C1..C6 and tabulate the results. */
dssc_status dssc_ablate(const char* config_path,
                        const dssc_run_options* options);

/* Write per-plan embedding CSVs from trained checkpoints. */
dssc_status dssc_export_embeddings(const char* config_path,
                                   const dssc_run_options* options,
                                   int* n_files_out);

/* A trained model loaded from a checkpoint. */
typedef struct dssc_model dssc_model;

dssc_status dssc_model_open(const char* checkpoint_path, dssc_model** out);
void dssc_model_close(dssc_model* model);

/* Both return -1 on a NULL model. */
int dssc_model_n_classes(const dssc_model* model);
int dssc_model_embedding_dim(const dssc_model* model);

/* Architecture as JSON. *needed receives the required buffer size
 * including the terminator; the text is copied when buf is big enough. */
dssc_status dssc_model_arch_json(const dssc_model* model, char* buf,
                                 size_t buf_size, size_t* needed);

/* Severity prediction for one utterance. probs (optional) must hold
 * n_classes doubles; predicted (optional) receives the argmax, ties to the
 * lowest index. */
dssc_status dssc_model_classify_wav(dssc_model* model, const char* wav_path,
                                    double* probs, int* predicted);

/* Same, from a row-major rows x cols float mel plane (a cached .mel
 * payload). Dimensions must match the model's input size. */
dssc_status dssc_model_classify_mel(dssc_model* model, const float* mel,
                                    int rows, int cols, double* probs,
                                    int* predicted);

#ifdef __cplusplus
}
#endif

#endif /* DSSC_H */
