#ifndef SONOMYO_H
#define SONOMYO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of fingers in every angle array.
 */
#define SONO_FINGERS 4

typedef enum SonoStatus {
  SONO_STATUS_OK = 0,
  SONO_STATUS_NULL_POINTER = 1,
  SONO_STATUS_INVALID_ARGUMENT = 2,
  SONO_STATUS_IO = 3,
  SONO_STATUS_FORMAT = 4,
  SONO_STATUS_DATA = 5,
  SONO_STATUS_PANIC = 6,
} SonoStatus;

/**
 * Classifier plus one regressor per configuration.
 */
typedef struct SonoBundle SonoBundle;

/**
 * Trained angle regressor.
 */
typedef struct SonoCnn SonoCnn;

/**
 * Trained configuration classifier.
 */
typedef struct SonoSvc SonoSvc;

/**
 * Output of one combined-pipeline frame.
 */
typedef struct SonoFrameResult {
  uint32_t configuration;
  /**
   * MCP flexion in degrees, clamped to [0, 100].
   */
  double flexion[SONO_FINGERS];
  /**
   * 1 where the raw prediction exceeded 100 degrees.
   */
  uint8_t saturated[SONO_FINGERS];
  double svc_seconds;
  double cnn_seconds;
  double total_seconds;
} SonoFrameResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sono_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *sono_last_error(void);

/**
 * MCP flexion of `finger` (0 index .. 3 pinky) from two metacarpal and two
 * proximal-phalanx markers, each three doubles.
 *
 * # Safety
 * Marker pointers must reference three doubles; `out` one double.
 */
enum SonoStatus sono_mcp_angle(uint32_t finger,
                               const double *m1,
                               const double *m2,
                               const double *p1,
                               const double *p2,
                               double *out);

/**
 * Root-mean-square error of two length-`n` arrays.
 *
 * # Safety
 * `truth` and `predicted` must reference `n` doubles; `out` one double.
 */
enum SonoStatus sono_rmse(const double *truth, const double *predicted, size_t n, double *out);

/**
 * Percentage of equal labels in two length-`n` arrays.
 *
 * # Safety
 * `truth` and `predicted` must reference `n` values; `out` one double.
 */
enum SonoStatus sono_accuracy(const uint32_t *truth,
                              const uint32_t *predicted,
                              size_t n,
                              double *out);

/**
 * Log-compress, normalise and block-average a `height` x `width` frame to
 * `target_height` x `target_width` values written to `out`.
 *
 * # Safety
 * `pixels` must reference `height * width` floats and `out`
 * `target_height * target_width` doubles.
 */
enum SonoStatus sono_preprocess(const float *pixels,
                                size_t height,
                                size_t width,
                                size_t target_height,
                                size_t target_width,
                                double log_dynamic_range,
                                double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SonoStatus sono_svc_load(const char *path, struct SonoSvc **out);

/**
 * Feature length the classifier expects, 0 for NULL.
 *
 * # Safety
 * `svc` must be NULL or a live handle.
 */
size_t sono_svc_feature_len(const struct SonoSvc *svc);

/**
 * Classify one feature vector; writes the configuration code.
 *
 * # Safety
 * `svc` must be a live handle, `features` reference `n` doubles and
 * `configuration` be writable.
 */
enum SonoStatus sono_svc_predict(const struct SonoSvc *svc,
                                 const double *features,
                                 size_t n,
                                 uint32_t *configuration);

/**
 * # Safety
 * `svc` must be NULL or a handle from [`sono_svc_load`] not yet freed.
 */
void sono_svc_free(struct SonoSvc *svc);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SonoStatus sono_cnn_load(const char *path, struct SonoCnn **out);

/**
 * Input length the regressor expects, 0 for NULL.
 *
 * # Safety
 * `cnn` must be NULL or a live handle.
 */
size_t sono_cnn_input_len(const struct SonoCnn *cnn);

/**
 * Predict clamped MCP flexion for one preprocessed input.
 *
 * # Safety
 * `cnn` must be a live handle, `input_values` reference `n` doubles,
 * `flexion` four doubles and `saturated` NULL or four bytes.
 */
enum SonoStatus sono_cnn_predict(const struct SonoCnn *cnn,
                                 const double *input_values,
                                 size_t n,
                                 double *flexion,
                                 uint8_t *saturated);

/**
 * # Safety
 * `cnn` must be NULL or a handle from [`sono_cnn_load`] not yet freed.
 */
void sono_cnn_free(struct SonoCnn *cnn);

/**
 * Load a bundle directory written by the `sonomyo` tool.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SonoStatus sono_bundle_load(const char *dir, struct SonoBundle **out);

/**
 * Classify a raw frame and regress its angles with the selected model.
 *
 * # Safety
 * `bundle` must be a live handle, `pixels` reference `height * width`
 * floats and `out` be writable.
 */
enum SonoStatus sono_bundle_process_frame(const struct SonoBundle *bundle,
                                          const float *pixels,
                                          size_t height,
                                          size_t width,
                                          uint64_t frame_index,
                                          struct SonoFrameResult *out);

/**
 * # Safety
 * `bundle` must be NULL or a handle from [`sono_bundle_load`] not yet freed.
 */
void sono_bundle_free(struct SonoBundle *bundle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SONOMYO_H */
