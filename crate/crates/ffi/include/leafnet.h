#ifndef LEAFNET_H
#define LEAFNET_H

#include <stddef.h>
#include <stdint.h>

typedef enum LeafnetStatus {
  LEAFNET_STATUS_OK = 0,
  LEAFNET_STATUS_NULL_POINTER = 1,
  LEAFNET_STATUS_INVALID_ARGUMENT = 2,
  LEAFNET_STATUS_IO = 3,
  LEAFNET_STATUS_CORRUPT = 4,
  LEAFNET_STATUS_INGESTION = 5,
  LEAFNET_STATUS_DIMENSION = 6,
  LEAFNET_STATUS_CONFIG = 7,
  LEAFNET_STATUS_NON_FINITE = 8,
  LEAFNET_STATUS_BUFFER_TOO_SMALL = 9,
  LEAFNET_STATUS_PANIC = 10,
} LeafnetStatus;

// A loaded checkpoint ready for inference. Opaque to C callers.
typedef struct LeafnetModel LeafnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a checkpoint file. On success `*out` owns a handle that must be
// released with `leafnet_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LeafnetStatus leafnet_model_load(const char *path, struct LeafnetModel **out);

// Release a handle from `leafnet_model_load`. Null is ignored.
//
// # Safety
// `model` must come from `leafnet_model_load` and not be used afterwards.
void leafnet_model_free(struct LeafnetModel *model);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum LeafnetStatus leafnet_model_num_classes(const struct LeafnetModel *model, size_t *out);

// Pointer to the NUL-terminated name of class `index`, valid until the
// handle is freed.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum LeafnetStatus leafnet_model_class_name(const struct LeafnetModel *model,
                                            size_t index,
                                            const char **out);

// Channels, height and width the model expects. Any output may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be valid pointers.
enum LeafnetStatus leafnet_model_input_shape(const struct LeafnetModel *model,
                                             size_t *channels,
                                             size_t *height,
                                             size_t *width);

// Total and trainable parameter counts. Either output may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be valid pointers.
enum LeafnetStatus leafnet_model_count_parameters(const struct LeafnetModel *model,
                                                  size_t *total,
                                                  size_t *trainable);

// Classify a PNG or JPEG file. `probs` (may be null) receives one
// probability per class; `class_index` (may be null) the arg-max class.
//
// # Safety
// `model` must be a live handle, `image_path` NUL-terminated, `probs` valid
// for `probs_len` floats when non-null.
enum LeafnetStatus leafnet_model_predict_file(const struct LeafnetModel *model,
                                              const char *image_path,
                                              float *probs,
                                              size_t probs_len,
                                              size_t *class_index);

// Classify interleaved 8-bit RGB pixels, row-major, `width * height * 3`
// bytes. The image is resized to the model input.
//
// # Safety
// `pixels` must be valid for `width * height * 3` bytes; other pointers as
// in `leafnet_model_predict_file`.
enum LeafnetStatus leafnet_model_predict_rgb(const struct LeafnetModel *model,
                                             const uint8_t *pixels,
                                             size_t width,
                                             size_t height,
                                             float *probs,
                                             size_t probs_len,
                                             size_t *class_index);

// Write the model back out as a checkpoint file.
//
// # Safety
// `model` must be a live handle and `path` NUL-terminated.
enum LeafnetStatus leafnet_model_save(const struct LeafnetModel *model, const char *path);

// Area under the ROC curve for `n` scores; `positive[i]` is nonzero for
// positive examples. Both classes must be present.
//
// # Safety
// `scores` and `positive` must be valid for `n` elements, `auc` a valid pointer.
enum LeafnetStatus leafnet_roc_auc(const double *scores,
                                   const uint8_t *positive,
                                   size_t n,
                                   double *auc);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to fit). Returns the buffer size needed for the full message,
// including the terminator. `buf` may be null to query the size.
//
// # Safety
// `buf` must be valid for `len` bytes when non-null.
size_t leafnet_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEAFNET_H */
