#ifndef TCA_H
#define TCA_H

#include <stddef.h>
#include <stdint.h>

// Result code of every exported function.
typedef enum TcaStatus {
  TCA_STATUS_OK = 0,
  TCA_STATUS_NULL_POINTER = 1,
  TCA_STATUS_INVALID_ARGUMENT = 2,
  TCA_STATUS_SHAPE_MISMATCH = 3,
  TCA_STATUS_IO = 4,
  TCA_STATUS_FORMAT = 5,
  TCA_STATUS_TRAINING_FAILURE = 6,
  TCA_STATUS_PANIC = 7,
} TcaStatus;

// Base unit family.
typedef enum TcaBase {
  TCA_BASE_SIGMOID = 0,
  TCA_BASE_TED = 1,
  TCA_BASE_LINEAR = 2,
} TcaBase;

// A trainable compound activation layer.
typedef struct TcaActivation TcaActivation;

// A dense auto-encoder.
typedef struct TcaAutoencoder TcaAutoencoder;

// A deep belief network with a labelled top layer.
typedef struct TcaDbn TcaDbn;

// A restricted Boltzmann machine with TCA hidden units.
typedef struct TcaRbm TcaRbm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *tca_last_error(void);

// Mean of the base generating distribution at natural parameter `u`.
//
// # Safety
// `out` must be a valid pointer to one `double`.
enum TcaStatus tca_base_mean(enum TcaBase base, double u, double *out);

// Derivative of the base activation at `u`.
//
// # Safety
// `out` must be a valid pointer to one `double`.
enum TcaStatus tca_base_deriv(enum TcaBase base, double u, double *out);

// A layer whose every unit equals the base activation.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum TcaStatus tca_activation_identity(enum TcaBase base,
                                       size_t units,
                                       size_t components,
                                       struct TcaActivation **out);

// A layer from row-major `units x components` log-scale and bias matrices.
//
// # Safety
// `log_scale` and `bias` must each hold `units * components` doubles and
// `out` must be a valid pointer to a handle slot.
enum TcaStatus tca_activation_new(enum TcaBase base,
                                  size_t units,
                                  size_t components,
                                  const double *log_scale,
                                  const double *bias,
                                  struct TcaActivation **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum TcaStatus tca_activation_load(const char *path, struct TcaActivation **out);

// # Safety
// `handle` must come from this library and `path` be NUL-terminated.
enum TcaStatus tca_activation_save(const struct TcaActivation *handle, const char *path);

// # Safety
// `handle` must come from this library (or be NULL) and not be used afterwards.
void tca_activation_free(struct TcaActivation *handle);

// # Safety
// `handle` must come from this library; `out` must be valid.
enum TcaStatus tca_activation_units(const struct TcaActivation *handle, size_t *out);

// # Safety
// `handle` must come from this library; `out` must be valid.
enum TcaStatus tca_activation_components(const struct TcaActivation *handle, size_t *out);

// Evaluate the layer on `len` pre-activations (one per unit).
//
// # Safety
// `x` and `out` must each hold `len` doubles.
enum TcaStatus tca_activation_eval(const struct TcaActivation *handle,
                                   const double *x,
                                   size_t len,
                                   double *out);

// Derivative of the layer at `len` pre-activations.
//
// # Safety
// `x` and `out` must each hold `len` doubles.
enum TcaStatus tca_activation_deriv(const struct TcaActivation *handle,
                                    const double *x,
                                    size_t len,
                                    double *out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum TcaStatus tca_rbm_load(const char *path, struct TcaRbm **out);

// # Safety
// `handle` must come from this library and `path` be NUL-terminated.
enum TcaStatus tca_rbm_save(const struct TcaRbm *handle, const char *path);

// # Safety
// `handle` must come from this library (or be NULL) and not be used afterwards.
void tca_rbm_free(struct TcaRbm *handle);

// # Safety
// `handle` must come from this library; both out pointers must be valid.
enum TcaStatus tca_rbm_dims(const struct TcaRbm *handle, size_t *visible, size_t *hidden);

// Free energy of one visible vector.
//
// # Safety
// `x` must hold `len` doubles and `out` must be valid.
enum TcaStatus tca_rbm_free_energy(const struct TcaRbm *handle,
                                   const double *x,
                                   size_t len,
                                   double *out);

// Mean hidden activation for one visible vector.
//
// # Safety
// `x` must hold `visible_len` doubles and `out` `hidden_len` doubles.
enum TcaStatus tca_rbm_hidden_mean(const struct TcaRbm *handle,
                                   const double *x,
                                   size_t visible_len,
                                   double *out,
                                   size_t hidden_len);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum TcaStatus tca_dbn_load(const char *path, struct TcaDbn **out);

// # Safety
// `handle` must come from this library and `path` be NUL-terminated.
enum TcaStatus tca_dbn_save(const struct TcaDbn *handle, const char *path);

// # Safety
// `handle` must come from this library (or be NULL) and not be used afterwards.
void tca_dbn_free(struct TcaDbn *handle);

// Input dimension and number of classes.
//
// # Safety
// `handle` must come from this library; both out pointers must be valid.
enum TcaStatus tca_dbn_dims(const struct TcaDbn *handle, size_t *input_dim, size_t *classes);

// Classify `rows` row-major images of `cols` pixels; writes one digit label per row.
//
// # Safety
// `x` must hold `rows * cols` doubles and `labels` `rows` bytes.
enum TcaStatus tca_dbn_classify(const struct TcaDbn *handle,
                                const double *x,
                                size_t rows,
                                size_t cols,
                                uint8_t *labels);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum TcaStatus tca_autoencoder_load(const char *path, struct TcaAutoencoder **out);

// # Safety
// `handle` must come from this library and `path` be NUL-terminated.
enum TcaStatus tca_autoencoder_save(const struct TcaAutoencoder *handle, const char *path);

// # Safety
// `handle` must come from this library (or be NULL) and not be used afterwards.
void tca_autoencoder_free(struct TcaAutoencoder *handle);

// # Safety
// `handle` must come from this library; both out pointers must be valid.
enum TcaStatus tca_autoencoder_dims(const struct TcaAutoencoder *handle,
                                    size_t *input_dim,
                                    size_t *output_dim);

// Reconstruct `rows` row-major inputs of `cols` values into `out`
// (`rows * output_dim` doubles).
//
// # Safety
// `x` must hold `rows * cols` doubles and `out` `out_len` doubles.
enum TcaStatus tca_autoencoder_reconstruct(const struct TcaAutoencoder *handle,
                                           const double *x,
                                           size_t rows,
                                           size_t cols,
                                           double *out,
                                           size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCA_H */
