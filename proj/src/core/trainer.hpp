#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/measures.hpp"
#include "core/relaxation.hpp"
#include "core/scheduler.hpp"
#include "core/tensor.hpp"

namespace korth {

struct DatasetSpec {
  std::uint32_t classes = 2;
  std::uint32_t input_dim = 8;
  std::uint32_t samples_per_class = 100;
  double separation = 10.0;
};

// Isotropic Gaussian clusters, one per class, means on a sphere of radius
// `separation`. Rows are grouped by class: all training rows first within
// each class's block, validation rows collected afterwards (90/10 split).
struct Dataset {
  RowMatrix train_inputs;
  std::vector<std::uint32_t> train_labels;
  RowMatrix val_inputs;
  std::vector<std::uint32_t> val_labels;
};

Dataset make_synthetic_dataset(const DatasetSpec& spec, std::uint64_t seed);

// Dense layer acting as a 1x1-kernel convolution: the weight is the same
// o x d KernelMatrix every regularizer consumes.
struct DenseLayer {
  KernelMatrix weight;
  Eigen::VectorXd bias;
};

struct ToyNetwork {
  std::vector<DenseLayer> layers;  // hidden layers then the output layer

  const DenseLayer* find(const std::string& name) const;
};

struct RegularizerConfig {
  RegularizerSpec spec;
  double coefficient = 0.01;          // initial c_reg
  std::optional<std::string> layer;   // restrict to one layer by name
  std::optional<RelaxationPlan> plan; // exemption counts for the relaxed variant
};

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 16;
  double learning_rate = 0.05;
  std::vector<std::uint32_t> milestones;  // epochs after which lr decays
  double decay_factor = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> hidden_dims;
  DatasetSpec dataset;
  std::optional<RegularizerConfig> regularizer;
  std::optional<BalanceConfig> balance;
};

void validate_train_config(const TrainConfig& cfg);
TrainConfig parse_train_config(const std::string& json_text);

struct EpochRecord {
  std::uint32_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double task_loss = 0.0;   // sample-weighted epoch average
  double reg_raw = 0.0;     // unweighted regularizer total, batch average
  double reg_corr = 0.0;
  double reg_diag = 0.0;
  double share = 0.0;       // regularizer share at end-of-epoch coefficients
  double c_reg = 0.0;
  double lambda_diag = 0.0;
  double val_accuracy = 0.0;
  std::vector<NearOrthReport> layer_reports;
};

struct TrainResult {
  ToyNetwork network;
  std::vector<EpochRecord> history;
  CoefficientState coefficients;
};

// Minibatch SGD with Nesterov momentum and milestone learning-rate decay.
// Fully deterministic for a fixed seed. Aborts with a diagnostic naming the
// epoch and batch if the loss stops being finite.
TrainResult train(const TrainConfig& cfg);

std::string metrics_to_jsonl(const TrainResult& result);
std::string summary_to_json(const TrainConfig& cfg, const TrainResult& result);

struct GradCheckReport {
  double relative_error = 0.0;  // |analytic - fd| / max(|fd|, 1e-12), norm-wise
  double analytic_norm = 0.0;
  double fd_norm = 0.0;
  std::size_t parameter_count = 0;
};

// Central finite differences of the full objective (task loss plus weighted
// regularizers) on the first minibatch, against the analytic gradient.
// Relaxed exemption masks are built once at the evaluation point and held
// fixed so the objective stays differentiable.
GradCheckReport objective_gradient_check(const TrainConfig& cfg,
                                         double step = 1e-5);

struct DemoConfig {
  std::uint64_t seed = 0;
  std::uint32_t epochs = 60;
  std::uint32_t batch_size = 16;
  double learning_rate = 0.05;
  std::vector<double> coefficients = {0.0, 0.1, 1.0, 10.0};
};

DemoConfig parse_demo_config(const std::string& json_text);

struct DemoRow {
  double coefficient = 0.0;
  double residual = 0.0;  // final ||KK^T - I||_F of the target layer
  double val_accuracy = 0.0;
};

struct DemoReport {
  std::uint32_t out_channels = 0;
  std::uint32_t background_dim = 0;
  double floor = 0.0;  // sqrt(o - d), unreachable residual lower bound
  std::vector<DemoRow> rows;
  double strict_corr = 0.0;   // strict run, unmasked correlation loss
  double relaxed_corr = 0.0;  // relaxed run, masked correlation loss
};

std::string demo_report_to_json(const DemoReport& report);

// Trains a 16-filter layer over an 8-dimensional input under increasingly
// heavy orthogonality pressure. The residual can never drop below
// sqrt(o - d); the function throws if any run appears to breach it. Also
// contrasts a strict disentangled run against a relaxed one whose largest
// correlation pairs are exempted.
DemoReport inaccessible_orthogonality_demo(const DemoConfig& cfg);

}  // namespace korth
