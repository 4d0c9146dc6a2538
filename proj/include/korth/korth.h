/* C interface to the kernel-orthogonality toolkit.
 *
 * Every function that can fail returns a korth_status; KORTH_OK means
 * success. On failure, korth_last_error() returns a thread-local message
 * describing what went wrong. Handles are opaque and must be released with
 * their matching *_free function. Strings returned through char** are owned
 * by the caller and released with korth_string_free().
 */
#ifndef KORTH_H
#define KORTH_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum korth_status {
  KORTH_OK = 0,
  KORTH_INVALID_ARGUMENT = 1,
  KORTH_BAD_MAGIC = 2,
  KORTH_BAD_VERSION = 3,
  KORTH_BAD_DTYPE = 4,
  KORTH_TRUNCATED = 5,
  KORTH_SIZE_MISMATCH = 6,
  KORTH_OVERFLOW = 7,
  KORTH_PARSE = 8,
  KORTH_VALIDATION = 9,
  KORTH_IO = 10,
  KORTH_DEGENERATE = 11,
  KORTH_NUMERIC = 12
} korth_status;

typedef enum korth_variant {
  KORTH_REG_FROBENIUS = 0,
  KORTH_REG_SCALED_FROBENIUS = 1,
  KORTH_REG_SRIP = 2,
  KORTH_REG_DISENTANGLED = 3,
  KORTH_REG_RELAXED = 4
} korth_variant;

typedef enum korth_ramp {
  KORTH_RAMP_LINEAR = 0,
  KORTH_RAMP_LOG = 1,
  KORTH_RAMP_EXP = 2
} korth_ramp;

typedef struct korth_tensor korth_tensor;
typedef struct korth_arch korth_arch;
typedef struct korth_plan korth_plan;

const char* korth_version(void);
const char* korth_last_error(void);
void korth_string_free(char* text);

/* ---- tensors (KTNSR container) ---- */

korth_status korth_tensor_create(const char* name, uint32_t out_channels,
                                 uint32_t in_channels, uint32_t kernel_h,
                                 uint32_t kernel_w, const double* data,
                                 korth_tensor** out);
korth_status korth_tensor_load_file(const char* path, korth_tensor** out);
korth_status korth_tensor_load_bytes(const uint8_t* bytes, size_t length,
                                     const char* name, korth_tensor** out);
/* float32 != 0 stores a 32-bit payload, otherwise 64-bit */
korth_status korth_tensor_save_file(const korth_tensor* tensor,
                                    const char* path, int float32);
void korth_tensor_free(korth_tensor* tensor);

korth_status korth_tensor_dims(const korth_tensor* tensor,
                               uint32_t* out_channels, uint32_t* in_channels,
                               uint32_t* kernel_h, uint32_t* kernel_w);
const char* korth_tensor_name(const korth_tensor* tensor);
/* row-major (o, i, kh, kw) block; valid while the tensor lives */
const double* korth_tensor_data(const korth_tensor* tensor);

/* ---- orthogonality measures ---- */

typedef struct korth_reg_spec {
  korth_variant variant;
  double lambda_diag;    /* weight of the diagonal term */
  int power_iterations;  /* spectral estimate rounds, at least 1 */
  uint64_t seed;         /* spectral start-vector seed */
} korth_reg_spec;

typedef struct korth_reg_result {
  double total;
  double corr_component;
  double diag_component;
  int degenerate;
} korth_reg_result;

/* For the relaxed variant, `plan` supplies per-layer exemption counts and is
 * matched against the tensor's name; pass NULL for the other variants. */
korth_status korth_loss(const korth_tensor* tensor,
                        const korth_reg_spec* spec, const korth_plan* plan,
                        korth_reg_result* out);

/* `gradient` must hold o * (i * kh * kw) doubles; filled row-major, one row
 * per filter. */
korth_status korth_loss_gradient(const korth_tensor* tensor,
                                 const korth_reg_spec* spec,
                                 const korth_plan* plan,
                                 korth_reg_result* out, double* gradient);

/* Central finite differences against the analytic gradient; the exemption
 * mask, if any, is frozen at the evaluation point. */
korth_status korth_gradient_check(const korth_tensor* tensor,
                                  const korth_reg_spec* spec,
                                  const korth_plan* plan, double step,
                                  double* relative_error);

/* Both sides of ||KK^T - I||_F: the direct norm and its reconstruction from
 * the Gram diagonal and lower triangle. */
korth_status korth_frobenius_decomposition(const korth_tensor* tensor,
                                           double* direct,
                                           double* decomposed);

typedef struct korth_report {
  char layer[128];
  double tril_mean;
  double tril_std;
  double diag_mean;
  int single_filter;
} korth_report;

korth_status korth_near_orth(const korth_tensor* tensor, korth_report* out);
korth_status korth_report_aggregate(const korth_report* reports, size_t count,
                                    korth_report* out);

/* ---- relaxation plans ---- */

korth_status korth_arch_parse(const char* json_text, korth_arch** out);
korth_status korth_arch_load_file(const char* path, korth_arch** out);
void korth_arch_free(korth_arch* arch);
size_t korth_arch_layer_count(const korth_arch* arch);

typedef struct korth_plan_params {
  uint32_t intrinsic_dim;
  uint32_t attribute_dim;
  uint32_t max_transition_dim;
  double least_ratio;
  korth_ramp pattern;
  uint32_t trials;
  uint64_t seed;
} korth_plan_params;

typedef struct korth_plan_entry {
  const char* layer; /* owned by the plan */
  int over_determined;
  uint32_t structural_dim;
  uint32_t freed_count;
  double expected_relaxed_pairs;
  double ratio;
  uint32_t exempt_total;
  uint32_t exempt_positive;
  uint32_t exempt_negative;
} korth_plan_entry;

korth_status korth_plan_build(const korth_arch* arch,
                              const korth_plan_params* params,
                              korth_plan** out);
korth_status korth_plan_parse(const char* json_text, korth_plan** out);
korth_status korth_plan_load_file(const char* path, korth_plan** out);
void korth_plan_free(korth_plan* plan);
size_t korth_plan_entry_count(const korth_plan* plan);
korth_status korth_plan_entry_at(const korth_plan* plan, size_t index,
                                 korth_plan_entry* out);
korth_status korth_plan_to_json(const korth_plan* plan, char** out);

korth_status korth_simulate(uint32_t freed, uint32_t boxes, uint32_t trials,
                            uint64_t seed, double* expected,
                            double* std_error);
korth_status korth_collision_closed_form(uint32_t freed, uint32_t boxes,
                                         double* out);
korth_status korth_transition_dimension(uint32_t attribute_dim,
                                        uint32_t intrinsic_dim,
                                        uint32_t max_transition_dim,
                                        uint32_t* out);
/* `out` must hold module_count doubles */
korth_status korth_ratio_map(uint32_t module_count, double least_ratio,
                             korth_ramp pattern, double* out);

/* ---- loss balancing ---- */

/* `unchanged` is set nonzero when the raw loss is not positive and the
 * current coefficient should be kept. */
korth_status korth_calibrate_coefficient(double task_loss,
                                         double raw_reg_loss,
                                         double target_share, double* out,
                                         int* unchanged);
korth_status korth_calibrate_lambda(double corr_loss, double raw_diag_loss,
                                    double target_share, double* out,
                                    int* unchanged);
korth_status korth_enforce_cap(double task_loss, double coefficient,
                               double raw_reg_loss, double cap_share,
                               double cap_target, double* out);
/* `out` must hold at least 5 entries */
korth_status korth_adjustment_epochs(const uint32_t* milestones,
                                     size_t milestone_count,
                                     uint32_t total_epochs, uint32_t* out,
                                     size_t* out_count);

/* ---- training ---- */

korth_status korth_train(const char* config_json, char** metrics_jsonl,
                         char** summary_json);
korth_status korth_objective_gradient_check(const char* config_json,
                                            double step,
                                            double* relative_error);
korth_status korth_demo_inaccessible(const char* config_json,
                                     char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* KORTH_H */
