#ifndef SUBNET_TDA_H
#define SUBNET_TDA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum SiStatus {
  SI_OK = 0,
  SI_ERR_NULL_POINTER = 1,
  SI_ERR_CONFIG = 2,
  SI_ERR_CONTRACT = 3,
  SI_ERR_NUMERICAL = 4,
  SI_ERR_FORMAT = 5,
  SI_ERR_IO = 6,
  SI_ERR_LOOKUP = 7,
  SI_ERR_UNDEFINED = 8,
  SI_ERR_BUFFER_SIZE = 9,
  SI_ERR_PANIC = 10,
} SiStatus;

// Opaque head mask.
typedef struct SiMask SiMask;

// Opaque model parameters.
typedef struct SiModel SiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; valid until the next failure.
const char *si_last_error(void);

// Loads parameters written by the training pipeline (a checkpoint `.bin`).
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum SiStatus si_model_load(const char *path, struct SiModel **out);

// Builds a freshly initialised model from a JSON model configuration.
//
// # Safety
// `config_json` must be a nul-terminated string and `out` writable.
enum SiStatus si_model_init(const char *config_json, uint64_t seed, struct SiModel **out);

// # Safety
// `model` must come from this library and not be used afterwards.
void si_model_free(struct SiModel *model);

// Writes the flat parameter count and the head grid shape.
//
// # Safety
// `model` must be a live handle; output pointers must be writable.
enum SiStatus si_model_shape(const struct SiModel *model,
                             size_t *num_params,
                             size_t *num_layers,
                             size_t *heads_per_layer,
                             size_t *num_classes);

// Parses a mask from its JSON form (as written by the prune stage).
//
// # Safety
// `json` must be a nul-terminated string and `out` writable.
enum SiStatus si_mask_load_json(const char *json, struct SiMask **out);

// All-ones mask shaped for `model`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum SiStatus si_mask_full(const struct SiModel *model, struct SiMask **out);

// # Safety
// `mask` must come from this library and not be used afterwards.
void si_mask_free(struct SiMask *mask);

// Class probabilities for one token sequence (which must start with CLS).
//
// # Safety
// Handles must be live; `tokens` holds `len` ids; `probs` holds `probs_len` doubles.
enum SiStatus si_forward(const struct SiModel *model,
                         const struct SiMask *mask,
                         const uint32_t *tokens,
                         size_t len,
                         double *probs,
                         size_t probs_len);

// Cross-entropy loss and its gradient with respect to every flat parameter.
//
// # Safety
// Handles must be live; `grad` holds `grad_len` doubles; `loss` is writable.
enum SiStatus si_loss_and_grad(const struct SiModel *model,
                               const struct SiMask *mask,
                               const uint32_t *tokens,
                               size_t len,
                               size_t label,
                               double *grad,
                               size_t grad_len,
                               double *loss);

// Loss gradient with respect to each head gate, row-major layers × heads.
//
// # Safety
// Handles must be live; `out` holds `out_len` doubles.
enum SiStatus si_gate_grad(const struct SiModel *model,
                           const struct SiMask *mask,
                           const uint32_t *tokens,
                           size_t len,
                           size_t label,
                           double *out,
                           size_t out_len);

// Cosine of two masks; a negative `layer` compares the flattened masks.
//
// # Safety
// Handles must be live and `out` writable.
enum SiStatus si_mask_cosine(const struct SiMask *a,
                             const struct SiMask *b,
                             int64_t layer,
                             double *out);

// TracIn score between two examples from their per-checkpoint sketches,
// each stored row-major as `checkpoints × dim`.
//
// # Safety
// `train` and `test` hold `checkpoints * dim` doubles; `out` is writable.
enum SiStatus si_tracin_score(const double *train,
                              const double *test,
                              size_t checkpoints,
                              size_t dim,
                              bool normalize,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBNET_TDA_H */
