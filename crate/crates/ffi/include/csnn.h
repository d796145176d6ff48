#ifndef CSNN_H
#define CSNN_H

/* Generated by cbindgen from csnn-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
typedef enum CsnnStatus {
  CSNN_STATUS_OK = 0,
  CSNN_STATUS_IO = 1,
  CSNN_STATUS_CONFIG = 2,
  CSNN_STATUS_DATA = 3,
  CSNN_STATUS_NUMERIC = 4,
  CSNN_STATUS_SNAPSHOT = 5,
  CSNN_STATUS_NULL_ARG = 6,
  CSNN_STATUS_INVALID_UTF8 = 7,
  CSNN_STATUS_PANIC = 8,
} CsnnStatus;

// Single LIF neuron stepped on a fixed grid. Opaque.
typedef struct CsnnLifSim CsnnLifSim;

// A built network (weights plus neuron state). Opaque.
typedef struct CsnnNetwork CsnnNetwork;

// Combined learning rule constants. Field meanings match the simulator's
// native parameters one for one.
typedef struct CsnnRuleParams {
  double mu_plus;
  double mu_minus;
  double tau_plus_ms;
  double tau_minus_ms;
  double lambda;
  double tau_ms;
  double theta_offset;
  double w_max;
  double weight_exp;
  bool printed_exponent;
  double w_min;
} CsnnRuleParams;

// LIF neuron constants; `dt_ms` lives on the simulator handle instead.
typedef struct CsnnLifParams {
  double tau_mem_ms;
  double mu_leak;
  double v_thresh;
  double v_reset;
  double refractory_ms;
} CsnnLifParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *csnn_version(void);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `cap`). Returns the full message length excluding the NUL.
size_t csnn_last_error(char *buf, size_t cap);

// Fill `out` with the simulator's default rule constants.
enum CsnnStatus csnn_rule_params_default(struct CsnnRuleParams *out);

// Weight change of the combined rule for one spike pairing. `w` must lie
// in `[0, w_max]`; times are in milliseconds.
enum CsnnStatus csnn_combined_delta(double t_pre_ms,
                                    double t_post_ms,
                                    double w,
                                    const struct CsnnRuleParams *params,
                                    double *out);

// Fill `out` with the simulator's default neuron constants.
enum CsnnStatus csnn_lif_params_default(struct CsnnLifParams *out);

// Create a single-neuron simulator. Fails on invalid constants.
enum CsnnStatus csnn_lif_sim_new(const struct CsnnLifParams *params,
                                 double dt_ms,
                                 struct CsnnLifSim **out);

// Advance the neuron one step with the given synaptic drive. Writes whether
// it fired and the post-step membrane potential.
enum CsnnStatus csnn_lif_sim_step(struct CsnnLifSim *sim,
                                  double drive,
                                  bool *out_fired,
                                  double *out_v_mem);

// Release a neuron simulator. Null is a no-op.
void csnn_lif_sim_free(struct CsnnLifSim *sim);

// Build a network with seeded random weights and default neuron and rule
// constants. `arch` is one of the preset names ("1C-1S-FC", "2C-1S-FC",
// "2C-1S-2C-FC"); `kernels` and `kernel_sizes` give per-conv-layer counts
// (one entry is broadcast to all conv layers).
enum CsnnStatus csnn_network_build(const char *arch,
                                   uint32_t input_h,
                                   uint32_t input_w,
                                   const uint32_t *kernels,
                                   size_t kernels_len,
                                   const uint32_t *kernel_sizes,
                                   size_t kernel_sizes_len,
                                   double pool_window_ms,
                                   uint32_t classes,
                                   uint64_t seed,
                                   struct CsnnNetwork **out);

// Number of trainable weights in the network.
enum CsnnStatus csnn_network_param_count(const struct CsnnNetwork *net, uint64_t *out);

// Seed the network was built with (or restored from).
enum CsnnStatus csnn_network_seed(const struct CsnnNetwork *net, uint64_t *out);

// Write the network's weights and adaptive thresholds to a snapshot file.
enum CsnnStatus csnn_network_save(const struct CsnnNetwork *net, const char *path);

// Load a snapshot from disk into a new network. The topology arguments
// must describe the same network the snapshot was taken from; a mismatch
// returns `CSNN_STATUS_SNAPSHOT`.
enum CsnnStatus csnn_network_load(const char *path,
                                  const char *arch,
                                  uint32_t input_h,
                                  uint32_t input_w,
                                  const uint32_t *kernels,
                                  size_t kernels_len,
                                  const uint32_t *kernel_sizes,
                                  size_t kernel_sizes_len,
                                  double pool_window_ms,
                                  uint32_t classes,
                                  struct CsnnNetwork **out);

// Release a network handle. Null is a no-op.
void csnn_network_free(struct CsnnNetwork *net);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CSNN_H */
