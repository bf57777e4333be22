/* C interface to the TSE-Net pipeline.
 *
 * Objects are opaque handles owned by the caller and released with the
 * matching *_free function (NULL is accepted). Every fallible call returns a
 * tsenet_status; on failure the message is available from tsenet_last_error()
 * on the same thread until the next call. Strings returned through char**
 * are released with tsenet_string_free, index arrays with tsenet_indices_free.
 */
#ifndef TSENET_H
#define TSENET_H

#include <stddef.h>
#include <stdint.h>

#if defined(TSENET_BUILDING_LIBRARY)
#define TSENET_API __attribute__((visibility("default")))
#else
#define TSENET_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tsenet_status {
  TSENET_OK = 0,
  TSENET_E_ARGUMENT = 1,   /* NULL or out-of-range argument */
  TSENET_E_PARSE = 2,      /* malformed input text */
  TSENET_E_VALIDATION = 3, /* well-formed input violating an invariant */
  TSENET_E_CONFIG = 4,     /* bad configuration value */
  TSENET_E_IO = 5,
  TSENET_E_RUNTIME = 6
} tsenet_status;

typedef struct tsenet_dataset tsenet_dataset;
typedef struct tsenet_hierarchy tsenet_hierarchy;
typedef struct tsenet_core tsenet_core;
typedef struct tsenet_net tsenet_net;

TSENET_API const char* tsenet_version(void);
TSENET_API const char* tsenet_last_error(void);
TSENET_API const char* tsenet_status_name(tsenet_status s);
/* 0 trace .. 6 off, as in spdlog. */
TSENET_API void tsenet_set_log_level(int level);
TSENET_API void tsenet_string_free(char* s);
TSENET_API void tsenet_indices_free(size_t* p);

/* ---- data ---- */

/* format: "dense-csv", "sparse-triplet" or "bag-of-words-vocab"; optional paths may be NULL. */
TSENET_API tsenet_status tsenet_dataset_load(const char* path, const char* format, const char* vocab_path,
                                             const char* labels_path, const char* label_column,
                                             tsenet_dataset** out);
TSENET_API void tsenet_dataset_free(tsenet_dataset* d);
TSENET_API tsenet_status tsenet_dataset_shape(const tsenet_dataset* d, size_t* n_cases, size_t* n_vars,
                                              size_t* n_classes);
/* policy: "positive" or "median". Drops constant columns; `dropped` (may be NULL) receives their count. */
TSENET_API tsenet_status tsenet_dataset_binarize(const tsenet_dataset* d, const char* policy, tsenet_dataset** out,
                                                 size_t* dropped);
TSENET_API tsenet_status tsenet_dataset_standardize(const tsenet_dataset* d, tsenet_dataset** out);
TSENET_API tsenet_status tsenet_dataset_subsample(const tsenet_dataset* d, size_t max_cases, uint64_t seed,
                                                  tsenet_dataset** out);
/* Rows in the listed order. */
TSENET_API tsenet_status tsenet_dataset_select(const tsenet_dataset* d, const size_t* rows, size_t n_rows,
                                               tsenet_dataset** out);

/* Seeded split; each array is allocated by the library. */
TSENET_API tsenet_status tsenet_split(size_t n_cases, double train, double validation, double test, uint64_t seed,
                                      size_t** train_rows, size_t* n_train, size_t** val_rows, size_t* n_val,
                                      size_t** test_rows, size_t* n_test);

/* ---- skeleton ---- */

typedef struct tsenet_skeleton_config {
  double delta;
  size_t top_threshold;
  size_t max_group;
  size_t structure_sample; /* 0 = every row */
  int refit_iter;
  int em_restarts;
  int em_max_iter;
  double em_tol;
  double em_smoothing;
  uint64_t seed;
} tsenet_skeleton_config;

TSENET_API void tsenet_skeleton_config_default(tsenet_skeleton_config* cfg);
/* The dataset must be binarized. */
TSENET_API tsenet_status tsenet_skeleton_build(const tsenet_dataset* d, const tsenet_skeleton_config* cfg,
                                               tsenet_hierarchy** out);
TSENET_API void tsenet_hierarchy_free(tsenet_hierarchy* h);
TSENET_API tsenet_status tsenet_hierarchy_save(const tsenet_hierarchy* h, const char* path);
TSENET_API tsenet_status tsenet_hierarchy_load(const char* path, tsenet_hierarchy** out);
/* Levels including the observed one. */
TSENET_API tsenet_status tsenet_hierarchy_levels(const tsenet_hierarchy* h, size_t* levels);
TSENET_API tsenet_status tsenet_hierarchy_level_size(const tsenet_hierarchy* h, size_t level, size_t* size);
/* JSON: level sizes, group sizes and UD-test gaps per layer. */
TSENET_API tsenet_status tsenet_hierarchy_summary(const tsenet_hierarchy* h, char** json);
/* Binary PPM of the layer-`layer` partition over a height x width pixel grid. */
TSENET_API tsenet_status tsenet_partition_image(const tsenet_hierarchy* h, size_t layer, size_t height, size_t width,
                                                const char* path);

/* ---- expansion ---- */

typedef struct tsenet_expansion_config {
  double fan_in_fraction;
  double cmi_floor; /* 0 disables */
} tsenet_expansion_config;

TSENET_API void tsenet_expansion_config_default(tsenet_expansion_config* cfg);
TSENET_API tsenet_status tsenet_expand(const tsenet_hierarchy* h, const tsenet_expansion_config* cfg,
                                       tsenet_core** out);
TSENET_API void tsenet_core_free(tsenet_core* c);
TSENET_API tsenet_status tsenet_core_save(const tsenet_core* c, const char* path);
TSENET_API tsenet_status tsenet_core_load(const char* path, tsenet_core** out);
/* Layered DOT graph; skeleton edges solid, expansion edges dashed. */
TSENET_API tsenet_status tsenet_core_export(const tsenet_core* c, const char* path);
TSENET_API tsenet_status tsenet_core_edges(const tsenet_core* c, size_t* total, size_t* expansion);
TSENET_API tsenet_status tsenet_core_layers(const tsenet_core* c, size_t* layers);
TSENET_API tsenet_status tsenet_core_layer_size(const tsenet_core* c, size_t layer, size_t* size);

/* ---- networks ---- */

typedef enum tsenet_head { TSENET_HEAD_AUTO = 0, TSENET_HEAD_SOFTMAX = 1, TSENET_HEAD_SIGMOID = 2 } tsenet_head;

typedef struct tsenet_net_config {
  size_t top_width;  /* B */
  size_t skip_width; /* s */
  int skip_paths;    /* 0 builds the Backbone only */
  tsenet_head head;
  uint64_t seed;
} tsenet_net_config;

TSENET_API void tsenet_net_config_default(tsenet_net_config* cfg);
TSENET_API tsenet_status tsenet_net_build_tse(const tsenet_core* c, const tsenet_net_config* cfg, size_t n_classes,
                                              tsenet_net** out);
/* shape: "rectangle" or "conic"; (units, layers, shape) must lie on the FNN grid. */
TSENET_API tsenet_status tsenet_net_build_fnn(size_t units, size_t layers, const char* shape, size_t in_dim,
                                              size_t n_classes, tsenet_head head, uint64_t seed, tsenet_net** out);
/* Dense ReLU chain of arbitrary widths. */
TSENET_API tsenet_status tsenet_net_build_dense(size_t in_dim, const size_t* widths, size_t n_widths,
                                                size_t n_classes, tsenet_head head, uint64_t seed,
                                                tsenet_net** out);
TSENET_API size_t tsenet_fnn_grid_size(void);
TSENET_API tsenet_status tsenet_fnn_grid_point(size_t i, size_t* units, size_t* layers, int* conic);
TSENET_API void tsenet_net_free(tsenet_net* n);
TSENET_API tsenet_status tsenet_net_param_count(const tsenet_net* n, size_t* count);
TSENET_API tsenet_status tsenet_net_input_dim(const tsenet_net* n, size_t* dim);
/* Global magnitude pruning to exactly `target_params` parameters. */
TSENET_API tsenet_status tsenet_net_prune(const tsenet_net* n, size_t target_params, tsenet_net** out);
/* Writes `stem`.json and `stem`.bin. */
TSENET_API tsenet_status tsenet_net_save(const tsenet_net* n, const char* stem);
TSENET_API tsenet_status tsenet_net_load(const char* stem, tsenet_net** out);

typedef struct tsenet_train_config {
  double learning_rate;
  double beta1;
  double beta2;
  double epsilon;
  size_t batch_size;
  size_t epochs;
  double dropout_rate;
  size_t patience;
  uint64_t seed;
} tsenet_train_config;

typedef struct tsenet_metrics {
  double accuracy;
  double auc; /* valid when has_auc */
  int has_auc;
  double loss;
  size_t param_count;
} tsenet_metrics;

TSENET_API void tsenet_train_config_default(tsenet_train_config* cfg);
/* Trains on the listed rows of `d` (its feature values) and returns the
 * best-validation snapshot. `history` (may be NULL) receives per-epoch JSON. */
TSENET_API tsenet_status tsenet_net_train(const tsenet_net* n, const tsenet_dataset* d, const size_t* train_rows,
                                          size_t n_train, const size_t* val_rows, size_t n_val,
                                          const tsenet_train_config* cfg, tsenet_net** out, char** history);
TSENET_API tsenet_status tsenet_net_evaluate(const tsenet_net* n, const tsenet_dataset* d, const size_t* rows,
                                             size_t n_rows, tsenet_metrics* out);

/* ---- interpretation ---- */

/* Characterizes the units of the layer with `role` ("feature" by default when
 * NULL) by their top-k correlated dataset columns over `rows` and scores them
 * against the embedding file. Writes a JSON report. */
TSENET_API tsenet_status tsenet_interpret(const tsenet_net* n, const tsenet_dataset* d, const size_t* rows,
                                          size_t n_rows, const char* embedding_path, size_t k, const char* role,
                                          char** report);

#ifdef __cplusplus
}
#endif

#endif /* TSENET_H */
