#ifndef SLIMDT_SLIMDT_H
#define SLIMDT_SLIMDT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SLIMDT_API __declspec(dllexport)
#else
#define SLIMDT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum slimdt_status {
  SLIMDT_OK = 0,
  SLIMDT_INVALID_ARGUMENT = 1,
  SLIMDT_CONFIG = 2,
  SLIMDT_NUMERIC = 3,
  SLIMDT_IO = 4,
  SLIMDT_FORMAT = 5,
  SLIMDT_INTERNAL = 6
} slimdt_status;

typedef struct slimdt_config slimdt_config;
typedef struct slimdt_dataset slimdt_dataset;
typedef struct slimdt_model slimdt_model;

SLIMDT_API const char* slimdt_version(void);
SLIMDT_API const char* slimdt_status_name(slimdt_status status);

/* Message of the last failed call on this thread ("" if none). */
SLIMDT_API const char* slimdt_last_error(void);
/* Dotted config field of the last SLIMDT_CONFIG failure ("" if none). */
SLIMDT_API const char* slimdt_last_error_field(void);
/* Human-readable summary of the last successful command on this thread. */
SLIMDT_API const char* slimdt_last_summary(void);

/* Run configuration (JSON). */
SLIMDT_API slimdt_status slimdt_config_load(const char* path, slimdt_config** out);
SLIMDT_API slimdt_status slimdt_config_parse(const char* text, slimdt_config** out);
SLIMDT_API void slimdt_config_free(slimdt_config* cfg);
/* Copies the resolved config echo into buf (NUL-terminated, truncated to
   cap). *needed receives the full length including the terminator. */
SLIMDT_API slimdt_status slimdt_config_echo(const slimdt_config* cfg, char* buf, size_t cap,
                                            size_t* needed);
SLIMDT_API slimdt_status slimdt_config_output_dir(const slimdt_config* cfg, char* buf,
                                                  size_t cap, size_t* needed);

/* Commands. Outputs go to the config's output directory. */
SLIMDT_API slimdt_status slimdt_cmd_datagen(const slimdt_config* cfg);
SLIMDT_API slimdt_status slimdt_cmd_train(const slimdt_config* cfg);
/* checkpoint may be NULL for <output_dir>/model.sdtc. */
SLIMDT_API slimdt_status slimdt_cmd_eval(const slimdt_config* cfg, const char* checkpoint);
SLIMDT_API slimdt_status slimdt_cmd_bench(const slimdt_config* cfg);
SLIMDT_API slimdt_status slimdt_cmd_ablate(const slimdt_config* cfg);

/* Datasets (SDT1). */
SLIMDT_API slimdt_status slimdt_dataset_load(const char* path, slimdt_dataset** out);
SLIMDT_API slimdt_status slimdt_dataset_generate(const slimdt_config* cfg, slimdt_dataset** out);
SLIMDT_API slimdt_status slimdt_dataset_save(const slimdt_dataset* ds, const char* path);
SLIMDT_API void slimdt_dataset_free(slimdt_dataset* ds);
SLIMDT_API size_t slimdt_dataset_size(const slimdt_dataset* ds);
SLIMDT_API slimdt_status slimdt_dataset_dims(const slimdt_dataset* ds, size_t* state_dim,
                                             size_t* action_dim);
SLIMDT_API slimdt_status slimdt_dataset_trajectory(const slimdt_dataset* ds, size_t index,
                                                   size_t* length, double* episode_return);

/* Trained models (SDTC checkpoints). */
typedef struct slimdt_return_stats {
  size_t n;
  int has_mean;
  int has_std;
  double mean;
  double std_dev;   /* sample standard deviation, needs n >= 2 */
  double std_error; /* std_dev / sqrt(n), valid when has_std */
} slimdt_return_stats;

SLIMDT_API slimdt_status slimdt_model_load(const char* checkpoint, slimdt_model** out);
SLIMDT_API void slimdt_model_free(slimdt_model* model);
SLIMDT_API size_t slimdt_model_param_count(const slimdt_model* model);
/* env: "linear_point" or "spike_reward". n_episodes per seed. */
SLIMDT_API slimdt_status slimdt_model_evaluate(const slimdt_model* model, const char* env,
                                               double target_rtg, size_t n_episodes,
                                               const uint64_t* seeds, size_t n_seeds,
                                               slimdt_return_stats* out);

/* Multiply-add accounting for one forward at batch size 1. */
typedef struct slimdt_flop_report {
  size_t sequence_length;
  uint64_t embed;
  uint64_t attn_proj;
  uint64_t attn_score;
  uint64_t attn_mix;
  uint64_t mlp;
  uint64_t injector; /* includes injector_score and injector_mix */
  uint64_t injector_score;
  uint64_t injector_mix;
  uint64_t head;
  uint64_t total;
  uint64_t softmax_elements;
  uint64_t layernorm_elements;
} slimdt_flop_report;

/* Uses the config's model section with the given state/action sizes. */
SLIMDT_API slimdt_status slimdt_count_flops(const slimdt_config* cfg, size_t state_dim,
                                            size_t action_dim, slimdt_flop_report* out);
SLIMDT_API slimdt_status slimdt_instrumented_flops(const slimdt_config* cfg, size_t state_dim,
                                                   size_t action_dim, slimdt_flop_report* out);

#ifdef __cplusplus
}
#endif

#endif
