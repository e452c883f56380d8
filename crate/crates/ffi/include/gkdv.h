#ifndef GKDV_H
#define GKDV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GkdvStatus {
  GKDV_STATUS_OK = 0,
  GKDV_STATUS_NULL_POINTER = 1,
  GKDV_STATUS_INVALID_ARGUMENT = 2,
  GKDV_STATUS_NUMERICAL = 3,
  GKDV_STATUS_IO = 4,
  GKDV_STATUS_FORMAT = 5,
  GKDV_STATUS_PANIC = 6,
} GkdvStatus;

// Sampled field with its time stamp.
typedef struct GkdvField GkdvField;

// Edge eigenpair of the linearized operator.
typedef struct GkdvSpectrum GkdvSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *gkdv_last_error(void);

// Library version as a static NUL-terminated string.
const char *gkdv_version(void);

// Creates a field on a periodic grid of length `length` with `n` samples
// copied from `values`.
//
// # Safety
// `values` must point to `n` doubles and `out` to writable storage.
enum GkdvStatus gkdv_field_new(double length,
                               size_t n,
                               const double *values,
                               double t,
                               struct GkdvField **out);

// Traveling wave `Q_c(x - c t - x0)` for exponent `p` sampled at time `t`.
//
// # Safety
// `out` must point to writable storage.
enum GkdvStatus gkdv_soliton(uint32_t p,
                             double c,
                             double x0,
                             double t,
                             double length,
                             size_t n,
                             struct GkdvField **out);

// # Safety
// `field` must be null or a handle from this library not yet freed.
void gkdv_field_free(struct GkdvField *field);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `field` must be null or a live handle.
size_t gkdv_field_len(const struct GkdvField *field);

// # Safety
// `field` must be a live handle and `length`, `t` writable.
enum GkdvStatus gkdv_field_info(const struct GkdvField *field, double *length, double *t);

// Copies the samples into `buf`, which must hold `len` doubles with
// `len >= gkdv_field_len(field)`.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum GkdvStatus gkdv_field_values(const struct GkdvField *field, double *buf, size_t len);

// Mass `∫u²` and energy `½∫u_x² - ∫u^{p+1}/(p+1)`.
//
// # Safety
// `field` must be a live handle; `mass`, `energy` writable.
enum GkdvStatus gkdv_field_conserved(const struct GkdvField *field,
                                     uint32_t p,
                                     double *mass,
                                     double *energy);

// Integrates `field` from its time stamp to `t1` with maximal step `dt`
// (0 selects the default).
//
// # Safety
// `field` must be a live handle and `out` writable.
enum GkdvStatus gkdv_evolve(const struct GkdvField *field,
                            uint32_t p,
                            double t1,
                            double dt,
                            struct GkdvField **out);

// # Safety
// `field` must be a live handle and `path` a NUL-terminated string.
enum GkdvStatus gkdv_snapshot_save(const struct GkdvField *field, const char *path);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum GkdvStatus gkdv_snapshot_load(const char *path, struct GkdvField **out);

// Edge eigenpair for exponent `p` on a grid of length `length` with `n`
// points. `cache_dir` may be null to skip the on-disk cache. Fails for
// `p <= 5`.
//
// # Safety
// `cache_dir` must be null or NUL-terminated; `out` writable.
enum GkdvStatus gkdv_spectrum_compute(uint32_t p,
                                      double length,
                                      size_t n,
                                      const char *cache_dir,
                                      struct GkdvSpectrum **out);

// Writes `e₀`, the tail rate `η₀` and `∫Z⁺Z⁻`.
//
// # Safety
// `s` must be a live handle; the outputs writable.
enum GkdvStatus gkdv_spectrum_values(const struct GkdvSpectrum *s,
                                     double *e0,
                                     double *eta0,
                                     double *gram);

// # Safety
// `s` must be null or a live handle.
void gkdv_spectrum_free(struct GkdvSpectrum *s);

// Runs a CLI command (`"profile"`, `"spectrum"`, `"coercivity"`,
// `"evolve"`, `"construct"`, `"verify"`) and returns its exit code, or -1
// for an unknown command. `config` and `out` may be null.
//
// # Safety
// Non-null arguments must be NUL-terminated strings.
int32_t gkdv_run(const char *command, const char *config, const char *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GKDV_H */
