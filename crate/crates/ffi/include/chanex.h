#ifndef CHANEX_H
#define CHANEX_H

#include <stddef.h>
#include <stdint.h>

typedef enum ChanexStatus {
  CHANEX_STATUS_OK = 0,
  CHANEX_STATUS_NULL_POINTER = 1,
  CHANEX_STATUS_INVALID_ARGUMENT = 2,
  CHANEX_STATUS_SHAPE_MISMATCH = 3,
  CHANEX_STATUS_MALFORMED_FILE = 4,
  CHANEX_STATUS_IO = 5,
  CHANEX_STATUS_EMPTY = 6,
  CHANEX_STATUS_NON_FINITE = 7,
  CHANEX_STATUS_CONTRACT_VIOLATION = 8,
  CHANEX_STATUS_PANIC = 9,
} ChanexStatus;

/*
 A trained CSI-to-PDP decoder.
 */
typedef struct ChanexC2p ChanexC2p;

/*
 A synthetic or imported dataset.
 */
typedef struct ChanexDataset ChanexDataset;

/*
 A trained channel extrapolator.
 */
typedef struct ChanexModel ChanexModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *chanex_version(void);

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *chanex_last_error(void);

/*
 Draws `n_samples` realizations. `config_toml` may be NULL for the
 default desk configuration.

 # Safety
 `config_toml` must be NULL or a NUL-terminated string; `out` must be
 writable.
 */
enum ChanexStatus chanex_dataset_generate(const char *config_toml,
                                          size_t n_samples,
                                          uint64_t seed,
                                          struct ChanexDataset **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ChanexStatus chanex_dataset_load(const char *path, struct ChanexDataset **out);

/*
 # Safety
 `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum ChanexStatus chanex_dataset_save(const struct ChanexDataset *dataset, const char *path);

/*
 # Safety
 `dataset` must be NULL or come from this library, and not be used again.
 */
void chanex_dataset_free(struct ChanexDataset *dataset);

/*
 Sample count and CSI dimensions.

 # Safety
 `dataset` must come from this library; every out pointer must be writable.
 */
enum ChanexStatus chanex_dataset_shape(const struct ChanexDataset *dataset,
                                       size_t *samples,
                                       size_t *n_rx,
                                       size_t *n_tx,
                                       size_t *n_subcarriers);

/*
 Copies the CSI of sample `index` into `re` and `im`, each of length
 `n_rx·n_tx·n_subcarriers`, indexed `(m·n_tx + k)·n_subcarriers + n`.

 # Safety
 `dataset` must come from this library; `re` and `im` must hold `len`
 values.
 */
enum ChanexStatus chanex_dataset_csi(const struct ChanexDataset *dataset,
                                     size_t index,
                                     double *re,
                                     double *im,
                                     size_t len);

/*
 Copies the ground-truth PDP of antenna pair `(m, k)` of sample `index`.

 # Safety
 `dataset` must come from this library; `out` must hold `len` values.
 */
enum ChanexStatus chanex_dataset_pdp(const struct ChanexDataset *dataset,
                                     size_t index,
                                     size_t m,
                                     size_t k,
                                     double *out,
                                     size_t len);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum ChanexStatus chanex_c2p_load(const char *path, struct ChanexC2p **out);

/*
 # Safety
 `model` must be NULL or come from this library, and not be used again.
 */
void chanex_c2p_free(struct ChanexC2p *model);

/*
 Length of the CSI input (`2·n_subcarriers`) and of the PDP output.

 # Safety
 `model` must come from this library; out pointers must be writable.
 */
enum ChanexStatus chanex_c2p_shape(const struct ChanexC2p *model, size_t *csi_len, size_t *n_bins);

/*
 Infers the PDP of one antenna pair from its CSI across subcarriers
 (real parts, then imaginary parts).

 # Safety
 `model` must come from this library; buffers must hold the stated lengths.
 */
enum ChanexStatus chanex_c2p_infer(const struct ChanexC2p *model,
                                   const double *csi,
                                   size_t csi_len,
                                   double *pdp,
                                   size_t pdp_len);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum ChanexStatus chanex_model_load(const char *path, struct ChanexModel **out);

/*
 # Safety
 `model` must be NULL or come from this library, and not be used again.
 */
void chanex_model_free(struct ChanexModel *model);

/*
 Grid size, patch edge, token count and multipath channels (0 for the
 baseline).

 # Safety
 `model` must come from this library; out pointers must be writable.
 */
enum ChanexStatus chanex_model_shape(const struct ChanexModel *model,
                                     size_t *n_rx,
                                     size_t *n_tx,
                                     size_t *patch,
                                     size_t *tokens,
                                     size_t *mp_channels);

/*
 Reconstructs one `[2, n_rx, n_tx]` CSI grid from the patches listed in
 `known` (row-major token indices). Known cells are copied to `out`
 unchanged. `multipath` is `[mp_channels, n_rx, n_tx]` in raw units and
 may be NULL for the baseline.

 # Safety
 `model` must come from this library; buffers must hold the lengths
 implied by [`chanex_model_shape`].
 */
enum ChanexStatus chanex_model_extrapolate(const struct ChanexModel *model,
                                           const double *csi,
                                           const double *multipath,
                                           const size_t *known,
                                           size_t n_known,
                                           double *out);

/*
 Masked-region and full-grid NMSE (dB) on the trailing `test_fraction`
 of `dataset` at one known-CSI percentage. `c2p` is required when the
 model was trained on inferred PDPs, and ignored otherwise.

 # Safety
 Handles must come from this library (`c2p` may be NULL); out pointers
 must be writable.
 */
enum ChanexStatus chanex_model_evaluate(const struct ChanexModel *model,
                                        const struct ChanexDataset *dataset,
                                        const struct ChanexC2p *c2p,
                                        double known_pct,
                                        uint64_t mask_seed,
                                        double test_fraction,
                                        double *nmse_masked_db,
                                        double *nmse_full_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANEX_H */
