#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace korth {

struct BalanceConfig {
  double target_reg_share = 0.10;   // regularizer share of the total loss
  double eps_reg = 0.01;
  double target_diag_share = 0.10;  // diagonal share within the regularizer
  double eps_diag = 0.05;
  double cap_share = 0.40;          // share that triggers scaling down
  double cap_target = 0.35;         // share restored when the cap trips
  std::uint32_t calibration_epoch = 10;
  std::vector<std::uint32_t> milestone_epochs;
};

void validate_balance_config(const BalanceConfig& cfg);

// Closed-form coefficient so that c * raw / (task + c * raw) equals the
// target share exactly. Returns nullopt when raw_reg_loss is not positive
// (nothing left to regularize; the caller keeps its current coefficient).
std::optional<double> calibrate_reg_coefficient(double task_loss,
                                                double raw_reg_loss,
                                                double target_share);

// Same algebra for the diagonal balance: lambda * diag / (corr + lambda *
// diag) hits the target exactly. nullopt when raw_diag_loss is not positive.
std::optional<double> calibrate_lambda(double corr_loss, double raw_diag_loss,
                                       double target_diag_share);

// Epochs where the coefficient cap is re-checked: start and midpoint of the
// second and third learning stages plus the start of the fourth, where
// stages are the intervals between learning-rate milestones. Midpoints are
// rounded down; stages beyond the available milestones are omitted.
std::vector<std::uint32_t> adjustment_epochs(
    const std::vector<std::uint32_t>& milestones, std::uint32_t total_epochs);

// If the regularizer share exceeds cap_share, retarget it to exactly
// cap_target; otherwise leave the coefficient alone.
double enforce_cap(double task_loss, double coefficient, double raw_reg_loss,
                   const BalanceConfig& cfg);

struct CoefficientAction {
  std::uint32_t epoch = 0;
  std::string action;        // "calibrate" or "cap"
  std::string coefficient;   // "c_reg" or "lambda_diag"
  double old_value = 0.0;
  double new_value = 0.0;
  double share_before = 0.0;
  double share_after = 0.0;
};

struct CoefficientState {
  double c_reg = 0.0;
  double lambda_diag = 0.0;
  std::vector<CoefficientAction> history;

  void record(CoefficientAction action);
};

std::string history_to_jsonl(const std::vector<CoefficientAction>& history);
std::vector<CoefficientAction> history_from_jsonl(const std::string& text);

// Applies the recorded new values in order on top of the initial
// coefficients; the result matches the live state the history came from.
CoefficientState replay_history(double initial_c_reg, double initial_lambda,
                                const std::vector<CoefficientAction>& history);

}  // namespace korth
