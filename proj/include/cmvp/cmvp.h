/* Copyright 2026 The cmvp Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to libcmvp. Every function returns a status code (CMVP_OK on
 * success); on failure cmvp_last_error() describes the problem for the
 * calling thread. Objects are opaque and released with their _free function.
 * Strings and buffers returned through out-parameters are released with
 * cmvp_free().
 */
#ifndef CMVP_CMVP_H
#define CMVP_CMVP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CMVP_API __declspec(dllexport)
#else
#define CMVP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum cmvp_status {
  CMVP_OK = 0,
  CMVP_INVALID_MATRIX = 1,
  CMVP_NUMERICAL_FAILURE = 2,
  CMVP_INVALID_TRUNCATION = 3,
  CMVP_NOT_ORTHONORMAL = 4,
  CMVP_DIMENSION_MISMATCH = 5,
  CMVP_INVALID_PARTITION = 6,
  CMVP_EMPTY_CLASS = 7,
  CMVP_INCONSISTENT_MESSAGES = 8,
  CMVP_CORRUPT_MESSAGE = 9,
  CMVP_COVERAGE_INFEASIBLE = 10,
  CMVP_INVALID_COUNT = 11,
  CMVP_CONFIG_ERROR = 12,
  CMVP_METRIC_UNAVAILABLE = 13,
  CMVP_IO_ERROR = 14,
  CMVP_INVALID_ARGUMENT = 15,
  CMVP_INTERNAL_ERROR = 99
};

typedef struct cmvp_config cmvp_config;
typedef struct cmvp_dataset cmvp_dataset;
typedef struct cmvp_run cmvp_run;

CMVP_API const char* cmvp_last_error(void);
CMVP_API const char* cmvp_status_name(int status);
CMVP_API void cmvp_free(void* ptr);

/* Run configuration (JSON). */
CMVP_API int cmvp_config_load(const char* path, cmvp_config** out);
CMVP_API int cmvp_config_parse(const char* json_text, cmvp_config** out);
CMVP_API int cmvp_config_set_seed(cmvp_config* cfg, uint64_t seed);
CMVP_API int cmvp_config_set_threads(cmvp_config* cfg, int threads);
/* mode: "encoder" or "direct" */
CMVP_API int cmvp_config_set_mode(cmvp_config* cfg, const char* mode);
CMVP_API int cmvp_config_to_json(const cmvp_config* cfg, char** out);
CMVP_API void cmvp_config_free(cmvp_config* cfg);

/* Datasets. generate() writes the training and the held-out split. */
CMVP_API int cmvp_dataset_generate(const cmvp_config* cfg, cmvp_dataset** train,
                                   cmvp_dataset** holdout);
CMVP_API int cmvp_dataset_save(const cmvp_dataset* ds, const char* path);
CMVP_API int cmvp_dataset_load(const char* path, cmvp_dataset** out);
CMVP_API int cmvp_dataset_shape(const cmvp_dataset* ds, int* agents, int* classes,
                                size_t* objects);
CMVP_API void cmvp_dataset_free(cmvp_dataset* ds);

/* Training runs. holdout may be NULL. */
CMVP_API int cmvp_run_create(const cmvp_config* cfg, const cmvp_dataset* train,
                             const cmvp_dataset* holdout, cmvp_run** out);
/* One round; *bound_holds receives 1 when every agent satisfied the trace bound. */
CMVP_API int cmvp_run_step(cmvp_run* run, int* bound_holds);
/* All remaining rounds; checkpoint_dir may be NULL. */
CMVP_API int cmvp_run_execute(cmvp_run* run, const char* checkpoint_dir);
CMVP_API int cmvp_run_rounds(const cmvp_run* run, int* rounds_completed);
CMVP_API int cmvp_run_bounds_hold(const cmvp_run* run, int* all_hold);
/* One JSON line per round. include_timing adds wall-clock seconds. */
CMVP_API int cmvp_run_write_log(const cmvp_run* run, const char* path, int include_timing);
CMVP_API int cmvp_run_checkpoint(const cmvp_run* run, const char* dir);
CMVP_API int cmvp_run_load_checkpoint(const char* dir, const cmvp_dataset* train,
                                      const cmvp_dataset* holdout, cmvp_run** out);
CMVP_API void cmvp_run_free(cmvp_run* run);

typedef struct cmvp_eval {
  double acc;
  int has_sis;
  double sis;
  double dis;
  double fisher_ratio; /* +inf when the within-class scatter vanishes */
  double within_class_abs_cos;
  double cross_class_abs_cos;
  double mean_subspace_distance;
  double max_subspace_distance;
  int any_rank_deficient;
} cmvp_eval;

/* Evaluates on ds; json_out (may be NULL) receives the full summary. */
CMVP_API int cmvp_run_evaluate(const cmvp_run* run, const cmvp_dataset* ds, cmvp_eval* out,
                               char** json_out);
/* Writes <prefix>.txt and <prefix>.ppm for the similarity matrix of ds. */
CMVP_API int cmvp_run_export_heatmap(const cmvp_run* run, const cmvp_dataset* ds,
                                     const char* prefix);

/* Verification suites. */
typedef struct cmvp_certification {
  int instances;
  int violations;
  double worst_relative_slack;
  double worst_excess;
} cmvp_certification;

CMVP_API int cmvp_verify_trace_bound(int instances, uint64_t seed, cmvp_certification* out);
CMVP_API int cmvp_verify_monotonicity(int instances, uint64_t seed, cmvp_certification* out);

typedef struct cmvp_consistency {
  int trials;
  int violations;
  double slope;
  double beta;
  double lipschitz;
  double constant;
  double zero_noise_distance; /* largest distance at noise 0 */
  double projector_formula_gap;
} cmvp_consistency;

/* N=4, d=32, R=8, r_i=4 over noise {0, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1}. report_out may be NULL. */
CMVP_API int cmvp_verify_consistency(uint64_t seed, int trials_per_level, cmvp_consistency* out,
                                     char** report_out);

/* Cost of one round of truncated SVDs: sum_k (M d p_k + N d p_k P_k). */
CMVP_API int cmvp_cost_estimate(uint64_t agents, uint64_t feature_dim, uint64_t total_samples,
                                const uint64_t* local_rank, const uint64_t* fused_rank,
                                size_t classes, uint64_t* out);
/* Shape of the configured problem: M = agents * classes * objects_per_class.
 * local_rank and fused_rank need `capacity` >= classes entries. */
CMVP_API int cmvp_config_cost_shape(const cmvp_config* cfg, uint64_t* agents, uint64_t* feature_dim,
                                    uint64_t* total_samples, uint64_t* local_rank,
                                    uint64_t* fused_rank, size_t capacity, size_t* classes);
CMVP_API int cmvp_cost_measure(uint64_t agents, uint64_t feature_dim, uint64_t total_samples,
                               const uint64_t* local_rank, const uint64_t* fused_rank,
                               size_t classes, uint64_t seed, double* seconds);

/* Basis messages. Entries are column-major d x p. */
typedef struct cmvp_basis_header {
  uint32_t agent_id;
  uint32_t class_id;
  uint32_t round;
  uint32_t dim;
  uint32_t rank;
} cmvp_basis_header;

CMVP_API int cmvp_basis_serialize(const cmvp_basis_header* header, const double* basis,
                                  const double* singular_values, uint8_t** out, size_t* size);
/* basis needs dim*rank doubles and singular_values rank doubles; pass NULL to query the header. */
CMVP_API int cmvp_basis_deserialize(const uint8_t* bytes, size_t size, cmvp_basis_header* header,
                                    double* basis, size_t basis_capacity,
                                    double* singular_values, size_t values_capacity);

#ifdef __cplusplus
}
#endif

#endif /* CMVP_CMVP_H */
