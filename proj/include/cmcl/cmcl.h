// Copyright 2026 The cmcl Authors.
// SPDX-License-Identifier: Apache-2.0

// C interface to the cmcl library. Every function returns a cmcl_status;
// on failure a human-readable message is available from cmcl_last_error()
// on the calling thread. Strings returned through char** out-parameters are
// owned by the caller and must be released with cmcl_string_free().

#ifndef CMCL_CMCL_H_
#define CMCL_CMCL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(CMCL_BUILDING_LIBRARY)
#define CMCL_API __declspec(dllexport)
#else
#define CMCL_API __declspec(dllimport)
#endif
#else
#define CMCL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cmcl_status {
  CMCL_OK = 0,
  CMCL_INVALID_ARGUMENT = 1,
  CMCL_DIMENSION_MISMATCH = 2,
  CMCL_ZERO_NORM_VECTOR = 3,
  CMCL_EMPTY_SEQUENCE = 4,
  CMCL_BATCH_TOO_SMALL = 5,
  CMCL_INDEX_OUT_OF_RANGE = 6,
  CMCL_LABEL_OUT_OF_RANGE = 7,
  CMCL_GRAPH_BATCH_MISMATCH = 8,
  CMCL_STALE_CACHE = 9,
  CMCL_INVALID_SPEC = 10,
  CMCL_INVALID_CONFIG = 11,
  CMCL_PARSE_ERROR = 12,
  CMCL_EMPTY_DATASET = 13,
  CMCL_IO_ERROR = 14,
  CMCL_ORACLE_UNAVAILABLE = 15,
  CMCL_DIVERGENCE_DETECTED = 16,
  CMCL_GRADIENT_CHECK_FAILED = 17,
  CMCL_INTERNAL = 18
} cmcl_status;

typedef enum cmcl_contrastive_mode {
  CMCL_MODE_VANILLA = 0,
  CMCL_MODE_GRAPH_NEGATIVES = 1,
  CMCL_MODE_MULTI_POSITIVE = 2
} cmcl_contrastive_mode;

typedef struct cmcl_graph cmcl_graph;
typedef struct cmcl_dataset cmcl_dataset;
typedef struct cmcl_model cmcl_model;

CMCL_API const char* cmcl_version(void);
CMCL_API const char* cmcl_status_name(int status);
CMCL_API const char* cmcl_last_error(void);
CMCL_API void cmcl_string_free(char* str);

/* Numerics. */
CMCL_API int cmcl_cosine_similarity(const double* a, const double* b, size_t dim, double* out);
CMCL_API int cmcl_log_sum_exp(const double* values, size_t count, double* out);

/* Symmetric 1-nearest-neighbour graph over the rows of a row-major
 * rows x dim matrix. */
CMCL_API int cmcl_graph_build(const double* embeddings, size_t rows, size_t dim,
                              cmcl_graph** out);
CMCL_API void cmcl_graph_free(cmcl_graph* graph);
CMCL_API int cmcl_graph_num_components(const cmcl_graph* graph, size_t* out);
/* labels must hold one entry per node. */
CMCL_API int cmcl_graph_component_labels(const cmcl_graph* graph, size_t* labels);
CMCL_API int cmcl_graph_to_json(const cmcl_graph* graph, char** out_json);

/* Contrastive loss for row-major rows x dim image and text embeddings.
 * alignment is dim x dim (NULL means identity). graph may be NULL for the
 * vanilla mode; the other modes build it from image when NULL. Gradient
 * outputs may be NULL. */
CMCL_API int cmcl_contrastive_loss(const double* image, const double* text, size_t rows,
                                   size_t dim, const double* alignment, double tau, int mode,
                                   const cmcl_graph* graph, double* value, double* grad_image,
                                   double* grad_text, double* grad_alignment);
CMCL_API int cmcl_supervised_ce(const double* logits, size_t rows, size_t classes,
                                const size_t* labels, double* value, double* grad_logits);

/* Datasets. */
CMCL_API int cmcl_generate_dataset(const char* spec_json, const char* out_dir);
CMCL_API int cmcl_dataset_load(const char* data_dir, cmcl_dataset** out);
CMCL_API void cmcl_dataset_free(cmcl_dataset* dataset);
/* split: 0 train, 1 test_iid, 2 test_counter. */
CMCL_API int cmcl_dataset_size(const cmcl_dataset* dataset, int split, size_t* out);

/* Models. */
CMCL_API int cmcl_model_load(const char* checkpoint_path, cmcl_model** out);
CMCL_API void cmcl_model_free(cmcl_model* model);
CMCL_API int cmcl_model_predict(const cmcl_model* model, const double* image, size_t image_dim,
                                const double* question, size_t question_dim, size_t* answer);
CMCL_API int cmcl_model_accuracy(const cmcl_model* model, const cmcl_dataset* dataset, int split,
                                 double* out);

/* Experiments. JSON arguments may be NULL for defaults. */
CMCL_API int cmcl_train(const char* config_json, const char* data_dir, const char* out_dir,
                        char** summary_json);
CMCL_API int cmcl_grad_check(uint64_t seed, size_t trials, char** report_json,
                             char** report_table, int* passed);

typedef struct cmcl_ablate_options {
  const char* config_json;  /* NULL: defaults */
  const char* modes;        /* comma separated, NULL: off,coarse_triplet,vanilla,graph_negatives,multi_positive */
  const char* lambdas;      /* comma separated, NULL or "": no lambda sweep */
  size_t seeds_per_cell;    /* 0: 5 */
  size_t threads;           /* 0: hardware concurrency */
  int has_seed;
  uint64_t seed;
} cmcl_ablate_options;

CMCL_API int cmcl_ablate(const cmcl_ablate_options* options, const char* data_dir,
                         const char* out_dir, char** csv);

typedef struct cmcl_probe_options {
  const char* checkpoint;
  const char* data_dir;
  int split;          /* 0 train, 1 test_iid, 2 test_counter */
  size_t batch_size;  /* 0: 64 */
  size_t num_batches; /* 0: 4 */
  uint64_t seed;
} cmcl_probe_options;

CMCL_API int cmcl_probe_graph(const cmcl_probe_options* options, char** report_json);

#ifdef __cplusplus
}
#endif

#endif  // CMCL_CMCL_H_
