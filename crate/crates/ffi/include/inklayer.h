/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef INKLAYER_H
#define INKLAYER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InklayerStatus {
  INKLAYER_STATUS_OK = 0,
  INKLAYER_STATUS_NULL_POINTER = 1,
  INKLAYER_STATUS_INVALID_ARGUMENT = 2,
  /*
   The pipeline rejected its inputs; the message names the stage.
   */
  INKLAYER_STATUS_PIPELINE_ERROR = 3,
  INKLAYER_STATUS_BUFFER_TOO_SMALL = 4,
  INKLAYER_STATUS_PANIC = 5,
} InklayerStatus;

/*
 Opaque pipeline output.
 */
typedef struct InklayerResult InklayerResult;

typedef struct InklayerConfig {
  double overlap_threshold;
  uint32_t cleanup_radius;
  uint32_t depth_bins;
  /*
   0 picks the count from the ink area.
   */
  uint32_t sample_points;
  uint8_t binarize_threshold;
  bool depth_refinement;
  double watershed_bridge;
  /*
   0 uses the default pool.
   */
  uint32_t threads;
} InklayerConfig;

typedef struct InklayerRect {
  uint32_t x;
  uint32_t y;
  uint32_t w;
  uint32_t h;
} InklayerRect;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Owned by the
 library and valid until the next call on the same thread.
 */
const char *inklayer_last_error(void);

struct InklayerConfig inklayer_config_default(void);

/*
 Segment a sketch and build its layer stack with the null inpainting
 backend.

 `sketch` is `width * height` gray values, row-major, dark = ink.
 `depth` is `width * height` values, larger = nearer, or null when
 refinement is off. `detections_json` is a detections document whose
 masks are embedded as run-length codes. A null `config` uses defaults.

 # Safety

 Buffers must hold `width * height` elements; `detections_json` must be a
 nul-terminated string; `out` must be writable.
 */
enum InklayerStatus inklayer_run(const uint8_t *sketch,
                                 const float *depth,
                                 uint32_t width,
                                 uint32_t height,
                                 const char *detections_json,
                                 const struct InklayerConfig *config,
                                 struct InklayerResult **out);

/*
 # Safety

 `result` must come from [`inklayer_run`] and not be freed twice.
 */
void inklayer_result_free(struct InklayerResult *result);

/*
 # Safety

 `result` must be a live handle; out pointers must be writable.
 */
enum InklayerStatus inklayer_result_dims(const struct InklayerResult *result,
                                         uint32_t *width,
                                         uint32_t *height);

/*
 Copy the per-pixel instance ids (0 = unlabeled) into `labels`.

 # Safety

 `labels` must hold `capacity` elements.
 */
enum InklayerStatus inklayer_result_labels(const struct InklayerResult *result,
                                           uint32_t *labels,
                                           size_t capacity);

/*
 Copy the unedited painter's composite into `pixels`.

 # Safety

 `pixels` must hold `capacity` bytes.
 */
enum InklayerStatus inklayer_result_composite(const struct InklayerResult *result,
                                              uint8_t *pixels,
                                              size_t capacity);

/*
 Number of layers; 0 for a null handle.

 # Safety

 `result` must be null or a live handle.
 */
size_t inklayer_result_layer_count(const struct InklayerResult *result);

/*
 Id, box and depth bin of layer `index`, counted back to front.

 # Safety

 `result` must be a live handle; out pointers must be writable.
 */
enum InklayerStatus inklayer_result_layer(const struct InklayerResult *result,
                                          size_t index,
                                          uint32_t *id,
                                          struct InklayerRect *bbox,
                                          uint32_t *depth_bin);

/*
 The run report as JSON, owned by the handle.

 # Safety

 `result` must be null or a live handle.
 */
const char *inklayer_result_report_json(const struct InklayerResult *result);

double inklayer_box_iou(struct InklayerRect a, struct InklayerRect b);

/*
 COCO-style interpolated AP of scored boxes against ground truth.

 # Safety

 `dets` and `scores` hold `n_dets` elements, `gts` holds `n_gts`.
 */
enum InklayerStatus inklayer_average_precision(const struct InklayerRect *dets,
                                               const double *scores,
                                               size_t n_dets,
                                               const struct InklayerRect *gts,
                                               size_t n_gts,
                                               double iou_threshold,
                                               double *out);

/*
 Kendall's tau-b between two depth assignments over the same ids.

 # Safety

 All four arrays hold `n` elements.
 */
enum InklayerStatus inklayer_kendall_tau(const uint32_t *pred_ids,
                                         const double *pred_depth,
                                         const uint32_t *gt_ids,
                                         const double *gt_depth,
                                         size_t n,
                                         double *out);

/*
 Run-length code of a mask given as bytes (nonzero = set), as the
 space-separated run list. Free with [`inklayer_string_free`].

 # Safety

 `mask` holds `width * height` bytes; `out` must be writable.
 */
enum InklayerStatus inklayer_rle_encode(const uint8_t *mask,
                                        uint32_t width,
                                        uint32_t height,
                                        char **out);

/*
 Decode a run list into `mask` as 0/1 bytes.

 # Safety

 `counts` is a nul-terminated string; `mask` holds `width * height` bytes.
 */
enum InklayerStatus inklayer_rle_decode(const char *counts,
                                        uint32_t width,
                                        uint32_t height,
                                        uint8_t *mask,
                                        size_t capacity);

/*
 # Safety

 `s` must be null or a string returned by this library, freed once.
 */
void inklayer_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INKLAYER_H */
