#ifndef VIDMON_H
#define VIDMON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an FFI call.
 */
typedef enum VmStatus {
  VM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  VM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  VM_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration or class table.
   */
  VM_STATUS_CONFIG = 3,
  /**
   * The query failed to parse or does not fit the operation.
   */
  VM_STATUS_QUERY = 4,
  /**
   * Annotation input could not be read or is malformed.
   */
  VM_STATUS_DATA = 5,
  /**
   * The sample cannot support the requested estimate.
   */
  VM_STATUS_ESTIMATION = 6,
  /**
   * Some other argument is out of range.
   */
  VM_STATUS_INVALID_ARGUMENT = 7,
  /**
   * The library hit an internal error. The handles passed in remain
   * valid but their results should not be trusted.
   */
  VM_STATUS_INTERNAL = 8,
} VmStatus;

typedef struct VmEngine VmEngine;

typedef struct VmQuery VmQuery;

typedef struct VmStream VmStream;

/**
 * Summary of a control-variate estimate.
 */
typedef struct VmCvResult {
  double estimate;
  /**
   * Estimated variance of `estimate`.
   */
  double variance_of_mean;
  double r_squared;
  /**
   * Plain-mean variance over control-variate variance; infinite when the
   * controls explain the response exactly.
   */
  double variance_reduction_factor;
  size_t n;
} VmCvResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine from TOML configuration text, or from the defaults
 * when `config_toml` is null.
 *
 * # Safety
 * `config_toml` is null or a NUL-terminated string; `out` is writable.
 */
enum VmStatus vm_engine_new(const char *config_toml, struct VmEngine **out);

/**
 * # Safety
 * `engine` is null or a handle from `vm_engine_new` not yet freed.
 */
void vm_engine_free(struct VmEngine *engine);

/**
 * Parses one query against the engine's classes and regions.
 *
 * # Safety
 * `engine` is a live handle, `text` a NUL-terminated string, `out` writable.
 */
enum VmStatus vm_query_parse(const struct VmEngine *engine, const char *text, struct VmQuery **out);

/**
 * Canonical text of a parsed query.
 *
 * # Safety
 * `engine` and `query` are live handles; `out` is writable. Free the
 * result with `vm_string_free`.
 */
enum VmStatus vm_query_to_string(const struct VmEngine *engine,
                                 const struct VmQuery *query,
                                 char **out);

/**
 * # Safety
 * `query` is null or a handle from `vm_query_parse` not yet freed.
 */
void vm_query_free(struct VmQuery *query);

/**
 * Generates the engine's configured synthetic stream.
 *
 * # Safety
 * `engine` is a live handle; `out` is writable.
 */
enum VmStatus vm_stream_simulate(const struct VmEngine *engine, struct VmStream **out);

/**
 * Reads a line-delimited JSON annotation file.
 *
 * # Safety
 * `engine` is a live handle, `path` a NUL-terminated string, `out` writable.
 */
enum VmStatus vm_stream_read(const struct VmEngine *engine,
                             const char *path,
                             struct VmStream **out);

/**
 * Number of frames in the stream; 0 for a null handle.
 *
 * # Safety
 * `stream` is null or a live handle.
 */
size_t vm_stream_len(const struct VmStream *stream);

/**
 * # Safety
 * `stream` is null or a handle not yet freed.
 */
void vm_stream_free(struct VmStream *stream);

/**
 * Runs a query over a stream with the engine's configured filter and
 * writes the result records, one JSON object per line, to `out`.
 *
 * # Safety
 * All handles are live; `out` is writable. Free the result with
 * `vm_string_free`.
 */
enum VmStatus vm_run(const struct VmEngine *engine,
                     const struct VmQuery *query,
                     const struct VmStream *stream,
                     char **out);

/**
 * Single control variate estimate of the mean of `y` using control `x`
 * with known mean `mu_x`. `beta_out` may be null.
 *
 * # Safety
 * `y` and `x` point to `n` doubles; `beta_out` is null or points to one
 * writable double; `out` is writable.
 */
enum VmStatus vm_cv_estimate(const double *y,
                             const double *x,
                             size_t n,
                             double mu_x,
                             double *beta_out,
                             struct VmCvResult *out);

/**
 * Multiple control variate estimate. `z` holds `n` rows of `d` controls in
 * row-major order and `mu_z` their `d` known means. `beta_out` may be null.
 *
 * # Safety
 * `y` points to `n` doubles, `z` to `n * d`, `mu_z` to `d`; `beta_out` is
 * null or points to `d` writable doubles; `out` is writable.
 */
enum VmStatus vm_mcv_estimate(const double *y,
                              const double *z,
                              size_t n,
                              size_t d,
                              const double *mu_z,
                              double *beta_out,
                              struct VmCvResult *out);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on this thread.
 */
const char *vm_last_error(void);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void vm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIDMON_H */
