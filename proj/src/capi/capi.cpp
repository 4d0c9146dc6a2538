#include "korth/korth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "core/error.hpp"
#include "core/measures.hpp"
#include "core/relaxation.hpp"
#include "core/scheduler.hpp"
#include "core/tensor.hpp"
#include "core/trainer.hpp"

struct korth_tensor {
  korth::KernelTensor value;
};

struct korth_arch {
  std::vector<korth::LayerDescriptor> layers;
};

struct korth_plan {
  korth::RelaxationPlan value;
};

namespace {

thread_local std::string g_last_error;

korth_status map_code(korth::ErrorCode code) {
  using korth::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidArgument: return KORTH_INVALID_ARGUMENT;
    case ErrorCode::BadMagic: return KORTH_BAD_MAGIC;
    case ErrorCode::BadVersion: return KORTH_BAD_VERSION;
    case ErrorCode::BadDtype: return KORTH_BAD_DTYPE;
    case ErrorCode::Truncated: return KORTH_TRUNCATED;
    case ErrorCode::SizeMismatch: return KORTH_SIZE_MISMATCH;
    case ErrorCode::Overflow: return KORTH_OVERFLOW;
    case ErrorCode::Parse: return KORTH_PARSE;
    case ErrorCode::Validation: return KORTH_VALIDATION;
    case ErrorCode::Io: return KORTH_IO;
    case ErrorCode::Degenerate: return KORTH_DEGENERATE;
    case ErrorCode::Numeric: return KORTH_NUMERIC;
  }
  return KORTH_NUMERIC;
}

template <typename Fn>
korth_status guarded(Fn&& fn) {
  try {
    fn();
    return KORTH_OK;
  } catch (const korth::Error& err) {
    g_last_error = err.what();
    return map_code(err.code());
  } catch (const std::exception& err) {
    g_last_error = err.what();
    return KORTH_NUMERIC;
  }
}

korth_status invalid(const char* message) {
  g_last_error = message;
  return KORTH_INVALID_ARGUMENT;
}

char* copy_string(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

korth::RegularizerSpec to_spec(const korth_reg_spec* spec) {
  korth::RegularizerSpec out;
  switch (spec->variant) {
    case KORTH_REG_FROBENIUS: out.variant = korth::RegVariant::Frobenius; break;
    case KORTH_REG_SCALED_FROBENIUS:
      out.variant = korth::RegVariant::ScaledFrobenius;
      break;
    case KORTH_REG_SRIP: out.variant = korth::RegVariant::Srip; break;
    case KORTH_REG_DISENTANGLED:
      out.variant = korth::RegVariant::Disentangled;
      break;
    case KORTH_REG_RELAXED:
      out.variant = korth::RegVariant::RelaxedDisentangled;
      break;
    default:
      korth::fail(korth::ErrorCode::InvalidArgument,
                  "unknown regularizer variant");
  }
  out.lambda_diag = spec->lambda_diag;
  out.power_iterations = spec->power_iterations;
  out.seed = spec->seed;
  return out;
}

// For the relaxed variant, derives the exemption mask for this tensor from
// the plan entry matching its name. Collapsed filters fall back to an empty
// mask; the loss path reports the degeneracy itself.
void attach_mask(korth::RegularizerSpec& spec, const korth::KernelMatrix& m,
                 const korth_plan* plan, const std::string& name) {
  if (spec.variant != korth::RegVariant::RelaxedDisentangled) {
    if (plan)
      korth::fail(korth::ErrorCode::InvalidArgument,
                  "a plan is only consumed by the relaxed variant");
    return;
  }
  if (!plan)
    korth::fail(korth::ErrorCode::InvalidArgument,
                "the relaxed variant requires a plan");
  const korth::PlanEntry* entry = plan->value.find(name);
  if (!entry)
    korth::fail(korth::ErrorCode::Validation,
                "plan has no entry for layer " + name);
  korth::PairMask mask;
  mask.order = static_cast<uint32_t>(m.rows());
  bool usable = true;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    usable = usable && m.values.row(r).norm() >= korth::kNormFloor;
  if (usable)
    mask = korth::build_exemption_mask(korth::correlation_tril(m),
                                       entry->counts);
  spec.exemption_mask = std::move(mask);
}

void fill_result(const korth::RegularizerResult& res, korth_reg_result* out) {
  out->total = res.total;
  out->corr_component = res.corr_component;
  out->diag_component = res.diag_component;
  out->degenerate = res.degenerate ? 1 : 0;
}

void fill_report(const korth::NearOrthReport& report, korth_report* out) {
  std::snprintf(out->layer, sizeof(out->layer), "%s",
                report.layer_name.c_str());
  out->tril_mean = report.tril_mean;
  out->tril_std = report.tril_std;
  out->diag_mean = report.diag_mean;
  out->single_filter = report.single_filter ? 1 : 0;
}

korth::RampPattern to_pattern(korth_ramp pattern) {
  switch (pattern) {
    case KORTH_RAMP_LINEAR: return korth::RampPattern::Linear;
    case KORTH_RAMP_LOG: return korth::RampPattern::Log;
    case KORTH_RAMP_EXP: return korth::RampPattern::Exp;
    default:
      korth::fail(korth::ErrorCode::InvalidArgument, "unknown ramp pattern");
  }
}

}  // namespace

extern "C" {

const char* korth_version(void) { return "0.1.0"; }

const char* korth_last_error(void) { return g_last_error.c_str(); }

void korth_string_free(char* text) { std::free(text); }

korth_status korth_tensor_create(const char* name, uint32_t out_channels,
                                 uint32_t in_channels, uint32_t kernel_h,
                                 uint32_t kernel_w, const double* data,
                                 korth_tensor** out) {
  if (!data || !out) return invalid("data and out must be non-null");
  return guarded([&] {
    const auto count = static_cast<size_t>(out_channels) * in_channels *
                       kernel_h * kernel_w;
    std::vector<double> values(data, data + count);
    auto tensor = std::make_unique<korth_tensor>();
    tensor->value = korth::make_tensor(name ? name : "", out_channels,
                                       in_channels, kernel_h, kernel_w,
                                       std::move(values));
    *out = tensor.release();
  });
}

korth_status korth_tensor_load_file(const char* path, korth_tensor** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto tensor = std::make_unique<korth_tensor>();
    tensor->value = korth::load_tensor_file(path);
    *out = tensor.release();
  });
}

korth_status korth_tensor_load_bytes(const uint8_t* bytes, size_t length,
                                     const char* name, korth_tensor** out) {
  if (!bytes || !out) return invalid("bytes and out must be non-null");
  return guarded([&] {
    auto tensor = std::make_unique<korth_tensor>();
    tensor->value =
        korth::load_tensor({bytes, length}, name ? name : "");
    *out = tensor.release();
  });
}

korth_status korth_tensor_save_file(const korth_tensor* tensor,
                                    const char* path, int float32) {
  if (!tensor || !path) return invalid("tensor and path must be non-null");
  return guarded([&] {
    korth::save_tensor_file(tensor->value, path,
                            float32 ? korth::Dtype::Float32
                                    : korth::Dtype::Float64);
  });
}

void korth_tensor_free(korth_tensor* tensor) { delete tensor; }

korth_status korth_tensor_dims(const korth_tensor* tensor,
                               uint32_t* out_channels, uint32_t* in_channels,
                               uint32_t* kernel_h, uint32_t* kernel_w) {
  if (!tensor) return invalid("tensor must be non-null");
  if (out_channels) *out_channels = tensor->value.out_channels;
  if (in_channels) *in_channels = tensor->value.in_channels;
  if (kernel_h) *kernel_h = tensor->value.kernel_h;
  if (kernel_w) *kernel_w = tensor->value.kernel_w;
  return KORTH_OK;
}

const char* korth_tensor_name(const korth_tensor* tensor) {
  return tensor ? tensor->value.name.c_str() : nullptr;
}

const double* korth_tensor_data(const korth_tensor* tensor) {
  return tensor ? tensor->value.data.data() : nullptr;
}

korth_status korth_loss(const korth_tensor* tensor,
                        const korth_reg_spec* spec, const korth_plan* plan,
                        korth_reg_result* out) {
  if (!tensor || !spec || !out)
    return invalid("tensor, spec, and out must be non-null");
  return guarded([&] {
    const korth::KernelMatrix m = korth::reshape_kernel(tensor->value);
    korth::RegularizerSpec s = to_spec(spec);
    attach_mask(s, m, plan, tensor->value.name);
    fill_result(korth::evaluate_regularizer(m, s), out);
  });
}

korth_status korth_loss_gradient(const korth_tensor* tensor,
                                 const korth_reg_spec* spec,
                                 const korth_plan* plan,
                                 korth_reg_result* out, double* gradient) {
  if (!tensor || !spec || !out || !gradient)
    return invalid("tensor, spec, out, and gradient must be non-null");
  return guarded([&] {
    const korth::KernelMatrix m = korth::reshape_kernel(tensor->value);
    korth::RegularizerSpec s = to_spec(spec);
    attach_mask(s, m, plan, tensor->value.name);
    const korth::RegularizerResult res = korth::regularizer_gradient(m, s);
    fill_result(res, out);
    const korth::RowMatrix& g = *res.gradient;
    std::memcpy(gradient, g.data(),
                static_cast<size_t>(g.size()) * sizeof(double));
  });
}

korth_status korth_gradient_check(const korth_tensor* tensor,
                                  const korth_reg_spec* spec,
                                  const korth_plan* plan, double step,
                                  double* relative_error) {
  if (!tensor || !spec || !relative_error)
    return invalid("tensor, spec, and relative_error must be non-null");
  if (!(step > 0.0)) return invalid("step must be positive");
  return guarded([&] {
    korth::KernelMatrix m = korth::reshape_kernel(tensor->value);
    korth::RegularizerSpec s = to_spec(spec);
    attach_mask(s, m, plan, tensor->value.name);
    const korth::RegularizerResult res = korth::regularizer_gradient(m, s);
    const korth::RowMatrix& analytic = *res.gradient;

    double diff_sq = 0.0;
    double fd_sq = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double saved = m.values(r, c);
        m.values(r, c) = saved + step;
        const double plus = korth::evaluate_regularizer(m, s).total;
        m.values(r, c) = saved - step;
        const double minus = korth::evaluate_regularizer(m, s).total;
        m.values(r, c) = saved;
        const double fd = (plus - minus) / (2.0 * step);
        const double delta = analytic(r, c) - fd;
        diff_sq += delta * delta;
        fd_sq += fd * fd;
      }
    }
    *relative_error =
        std::sqrt(diff_sq) / std::max(std::sqrt(fd_sq), 1e-12);
  });
}

korth_status korth_frobenius_decomposition(const korth_tensor* tensor,
                                           double* direct,
                                           double* decomposed) {
  if (!tensor || !direct || !decomposed)
    return invalid("tensor, direct, and decomposed must be non-null");
  return guarded([&] {
    const korth::KernelMatrix m = korth::reshape_kernel(tensor->value);
    *direct = korth::frobenius_loss(m).total;
    *decomposed = korth::decomposed_frobenius(m);
  });
}

korth_status korth_near_orth(const korth_tensor* tensor, korth_report* out) {
  if (!tensor || !out) return invalid("tensor and out must be non-null");
  return guarded([&] {
    const korth::KernelMatrix m = korth::reshape_kernel(tensor->value);
    fill_report(korth::near_orth_report(m, tensor->value.name), out);
  });
}

korth_status korth_report_aggregate(const korth_report* reports, size_t count,
                                    korth_report* out) {
  if (!reports || !out) return invalid("reports and out must be non-null");
  return guarded([&] {
    std::vector<korth::NearOrthReport> converted(count);
    for (size_t i = 0; i < count; ++i) {
      converted[i].layer_name = reports[i].layer;
      converted[i].tril_mean = reports[i].tril_mean;
      converted[i].tril_std = reports[i].tril_std;
      converted[i].diag_mean = reports[i].diag_mean;
      converted[i].single_filter = reports[i].single_filter != 0;
    }
    fill_report(korth::aggregate_reports(converted), out);
  });
}

korth_status korth_arch_parse(const char* json_text, korth_arch** out) {
  if (!json_text || !out) return invalid("json_text and out must be non-null");
  return guarded([&] {
    auto arch = std::make_unique<korth_arch>();
    arch->layers = korth::load_architecture(json_text);
    *out = arch.release();
  });
}

korth_status korth_arch_load_file(const char* path, korth_arch** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto arch = std::make_unique<korth_arch>();
    arch->layers = korth::load_architecture_file(path);
    *out = arch.release();
  });
}

void korth_arch_free(korth_arch* arch) { delete arch; }

size_t korth_arch_layer_count(const korth_arch* arch) {
  return arch ? arch->layers.size() : 0;
}

korth_status korth_plan_build(const korth_arch* arch,
                              const korth_plan_params* params,
                              korth_plan** out) {
  if (!arch || !params || !out)
    return invalid("arch, params, and out must be non-null");
  return guarded([&] {
    korth::PlanParams p;
    p.intrinsic_dim = params->intrinsic_dim;
    p.attribute_dim = params->attribute_dim;
    p.max_transition_dim = params->max_transition_dim;
    p.least_ratio = params->least_ratio;
    p.pattern = to_pattern(params->pattern);
    p.trials = params->trials;
    p.seed = params->seed;
    auto plan = std::make_unique<korth_plan>();
    plan->value = korth::build_plan(arch->layers, p);
    *out = plan.release();
  });
}

korth_status korth_plan_parse(const char* json_text, korth_plan** out) {
  if (!json_text || !out) return invalid("json_text and out must be non-null");
  return guarded([&] {
    auto plan = std::make_unique<korth_plan>();
    plan->value = korth::plan_from_json(json_text);
    *out = plan.release();
  });
}

korth_status korth_plan_load_file(const char* path, korth_plan** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    auto plan = std::make_unique<korth_plan>();
    plan->value = korth::plan_from_file(path);
    *out = plan.release();
  });
}

void korth_plan_free(korth_plan* plan) { delete plan; }

size_t korth_plan_entry_count(const korth_plan* plan) {
  return plan ? plan->value.entries.size() : 0;
}

korth_status korth_plan_entry_at(const korth_plan* plan, size_t index,
                                 korth_plan_entry* out) {
  if (!plan || !out) return invalid("plan and out must be non-null");
  if (index >= plan->value.entries.size())
    return invalid("plan entry index out of range");
  const korth::PlanEntry& entry = plan->value.entries[index];
  out->layer = entry.layer.c_str();
  out->over_determined =
      entry.determinacy == korth::Determinacy::OverDetermined ? 1 : 0;
  out->structural_dim = entry.structural_dim;
  out->freed_count = entry.freed_count;
  out->expected_relaxed_pairs = entry.expected_relaxed_pairs;
  out->ratio = entry.ratio;
  out->exempt_total = entry.counts.total;
  out->exempt_positive = entry.counts.positive;
  out->exempt_negative = entry.counts.negative;
  return KORTH_OK;
}

korth_status korth_plan_to_json(const korth_plan* plan, char** out) {
  if (!plan || !out) return invalid("plan and out must be non-null");
  return guarded([&] { *out = copy_string(korth::plan_to_json(plan->value)); });
}

korth_status korth_simulate(uint32_t freed, uint32_t boxes, uint32_t trials,
                            uint64_t seed, double* expected,
                            double* std_error) {
  if (!expected) return invalid("expected must be non-null");
  return guarded([&] {
    const korth::CollisionEstimate estimate =
        korth::estimate_relaxed_pairs(freed, boxes, trials, seed);
    *expected = estimate.expected_pairs;
    if (std_error) *std_error = estimate.std_error;
  });
}

korth_status korth_collision_closed_form(uint32_t freed, uint32_t boxes,
                                         double* out) {
  if (!out) return invalid("out must be non-null");
  return guarded([&] { *out = korth::collision_closed_form(freed, boxes); });
}

korth_status korth_transition_dimension(uint32_t attribute_dim,
                                        uint32_t intrinsic_dim,
                                        uint32_t max_transition_dim,
                                        uint32_t* out) {
  if (!out) return invalid("out must be non-null");
  return guarded([&] {
    *out = korth::transition_dimension(attribute_dim, intrinsic_dim,
                                       max_transition_dim);
  });
}

korth_status korth_ratio_map(uint32_t module_count, double least_ratio,
                             korth_ramp pattern, double* out) {
  if (!out) return invalid("out must be non-null");
  return guarded([&] {
    const std::vector<double> ratios =
        korth::build_ratio_map(module_count, least_ratio, to_pattern(pattern));
    std::memcpy(out, ratios.data(), ratios.size() * sizeof(double));
  });
}

korth_status korth_calibrate_coefficient(double task_loss,
                                         double raw_reg_loss,
                                         double target_share, double* out,
                                         int* unchanged) {
  if (!out || !unchanged) return invalid("out and unchanged must be non-null");
  return guarded([&] {
    const auto result =
        korth::calibrate_reg_coefficient(task_loss, raw_reg_loss, target_share);
    *unchanged = result ? 0 : 1;
    if (result) *out = *result;
  });
}

korth_status korth_calibrate_lambda(double corr_loss, double raw_diag_loss,
                                    double target_share, double* out,
                                    int* unchanged) {
  if (!out || !unchanged) return invalid("out and unchanged must be non-null");
  return guarded([&] {
    const auto result =
        korth::calibrate_lambda(corr_loss, raw_diag_loss, target_share);
    *unchanged = result ? 0 : 1;
    if (result) *out = *result;
  });
}

korth_status korth_enforce_cap(double task_loss, double coefficient,
                               double raw_reg_loss, double cap_share,
                               double cap_target, double* out) {
  if (!out) return invalid("out must be non-null");
  return guarded([&] {
    korth::BalanceConfig cfg;
    cfg.cap_share = cap_share;
    cfg.cap_target = cap_target;
    *out = korth::enforce_cap(task_loss, coefficient, raw_reg_loss, cfg);
  });
}

korth_status korth_adjustment_epochs(const uint32_t* milestones,
                                     size_t milestone_count,
                                     uint32_t total_epochs, uint32_t* out,
                                     size_t* out_count) {
  if ((!milestones && milestone_count > 0) || !out || !out_count)
    return invalid("milestones, out, and out_count must be non-null");
  return guarded([&] {
    const std::vector<uint32_t> input(milestones,
                                      milestones + milestone_count);
    const std::vector<uint32_t> epochs =
        korth::adjustment_epochs(input, total_epochs);
    std::memcpy(out, epochs.data(), epochs.size() * sizeof(uint32_t));
    *out_count = epochs.size();
  });
}

korth_status korth_train(const char* config_json, char** metrics_jsonl,
                         char** summary_json) {
  if (!config_json) return invalid("config_json must be non-null");
  return guarded([&] {
    const korth::TrainConfig cfg = korth::parse_train_config(config_json);
    const korth::TrainResult result = korth::train(cfg);
    if (metrics_jsonl)
      *metrics_jsonl = copy_string(korth::metrics_to_jsonl(result));
    if (summary_json)
      *summary_json = copy_string(korth::summary_to_json(cfg, result));
  });
}

korth_status korth_objective_gradient_check(const char* config_json,
                                            double step,
                                            double* relative_error) {
  if (!config_json || !relative_error)
    return invalid("config_json and relative_error must be non-null");
  return guarded([&] {
    const korth::TrainConfig cfg = korth::parse_train_config(config_json);
    *relative_error = korth::objective_gradient_check(cfg, step).relative_error;
  });
}

korth_status korth_demo_inaccessible(const char* config_json,
                                     char** report_json) {
  if (!config_json) return invalid("config_json must be non-null");
  return guarded([&] {
    const korth::DemoConfig cfg = korth::parse_demo_config(config_json);
    const korth::DemoReport report = korth::inaccessible_orthogonality_demo(cfg);
    if (report_json) *report_json = copy_string(korth::demo_report_to_json(report));
  });
}

}  // extern "C"
