#include "core/scheduler.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace korth {

void validate_balance_config(const BalanceConfig& cfg) {
  if (!(cfg.target_reg_share > 0.0 && cfg.target_reg_share < cfg.cap_share &&
        cfg.cap_share < 1.0)) {
    fail(ErrorCode::InvalidArgument,
         "balance targets must satisfy 0 < target < cap < 1");
  }
  if (!(cfg.target_diag_share > 0.0 && cfg.target_diag_share < 1.0)) {
    fail(ErrorCode::InvalidArgument, "diagonal share target must lie in (0, 1)");
  }
  if (!(cfg.eps_reg > 0.0 && cfg.eps_diag > 0.0)) {
    fail(ErrorCode::InvalidArgument, "tolerance bands must be positive");
  }
  if (!(cfg.cap_target > 0.0 && cfg.cap_target <= cfg.cap_share)) {
    fail(ErrorCode::InvalidArgument,
         "cap retarget must be positive and not above the cap itself");
  }
  if (cfg.calibration_epoch == 0) {
    fail(ErrorCode::InvalidArgument, "calibration epoch must be positive");
  }
}

namespace {

// Solves share = c * raw / (base + c * raw) for c.
double share_solution(double base_loss, double raw_loss, double target) {
  return target / (1.0 - target) * base_loss / raw_loss;
}

}  // namespace

std::optional<double> calibrate_reg_coefficient(double task_loss,
                                                double raw_reg_loss,
                                                double target_share) {
  if (!(task_loss > 0.0)) {
    fail(ErrorCode::InvalidArgument, "task loss must be positive to calibrate");
  }
  if (!(target_share >= 0.0 && target_share < 1.0)) {
    fail(ErrorCode::InvalidArgument, "target share must lie in [0, 1)");
  }
  if (!(raw_reg_loss > 0.0)) return std::nullopt;
  if (target_share == 0.0) return 0.0;
  return share_solution(task_loss, raw_reg_loss, target_share);
}

std::optional<double> calibrate_lambda(double corr_loss, double raw_diag_loss,
                                       double target_diag_share) {
  if (!(corr_loss >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "correlation loss cannot be negative");
  }
  if (!(target_diag_share >= 0.0 && target_diag_share < 1.0)) {
    fail(ErrorCode::InvalidArgument, "target share must lie in [0, 1)");
  }
  if (!(raw_diag_loss > 0.0)) return std::nullopt;
  if (corr_loss == 0.0 || target_diag_share == 0.0) return 0.0;
  return share_solution(corr_loss, raw_diag_loss, target_diag_share);
}

std::vector<std::uint32_t> adjustment_epochs(
    const std::vector<std::uint32_t>& milestones, std::uint32_t total_epochs) {
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] == 0 || milestones[i] >= total_epochs) {
      fail(ErrorCode::InvalidArgument,
           "milestones must lie strictly inside the epoch range");
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      fail(ErrorCode::InvalidArgument, "milestones must be strictly increasing");
    }
  }

  // Stage k spans [bound(k-1), bound(k)) with bounds 0, m1, m2, ..., total.
  auto stage_end = [&](std::size_t milestone_index) {
    return milestone_index < milestones.size() ? milestones[milestone_index]
                                               : total_epochs;
  };
  std::vector<std::uint32_t> epochs;
  if (milestones.size() >= 1) {
    epochs.push_back(milestones[0]);
    epochs.push_back((milestones[0] + stage_end(1)) / 2);
  }
  if (milestones.size() >= 2) {
    epochs.push_back(milestones[1]);
    epochs.push_back((milestones[1] + stage_end(2)) / 2);
  }
  if (milestones.size() >= 3) {
    epochs.push_back(milestones[2]);
  }
  return epochs;
}

double enforce_cap(double task_loss, double coefficient, double raw_reg_loss,
                   const BalanceConfig& cfg) {
  if (!(raw_reg_loss > 0.0) || !(coefficient > 0.0)) return coefficient;
  if (!(task_loss > 0.0)) {
    fail(ErrorCode::InvalidArgument, "task loss must be positive to cap");
  }
  const double weighted = coefficient * raw_reg_loss;
  const double share = weighted / (task_loss + weighted);
  if (share <= cfg.cap_share) return coefficient;
  return share_solution(task_loss, raw_reg_loss, cfg.cap_target);
}

void CoefficientState::record(CoefficientAction action) {
  if (action.coefficient == "c_reg") {
    c_reg = action.new_value;
  } else if (action.coefficient == "lambda_diag") {
    lambda_diag = action.new_value;
  } else {
    fail(ErrorCode::InvalidArgument,
         "unknown coefficient name: " + action.coefficient);
  }
  history.push_back(std::move(action));
}

std::string history_to_jsonl(const std::vector<CoefficientAction>& history) {
  std::string out;
  for (const CoefficientAction& a : history) {
    nlohmann::ordered_json line;
    line["epoch"] = a.epoch;
    line["action"] = a.action;
    line["coefficient"] = a.coefficient;
    line["old"] = a.old_value;
    line["new"] = a.new_value;
    line["share_before"] = a.share_before;
    line["share_after"] = a.share_after;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<CoefficientAction> history_from_jsonl(const std::string& text) {
  std::vector<CoefficientAction> history;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    try {
      const auto parsed = nlohmann::json::parse(line);
      CoefficientAction a;
      a.epoch = parsed.at("epoch").get<std::uint32_t>();
      a.action = parsed.at("action").get<std::string>();
      a.coefficient = parsed.at("coefficient").get<std::string>();
      a.old_value = parsed.at("old").get<double>();
      a.new_value = parsed.at("new").get<double>();
      a.share_before = parsed.at("share_before").get<double>();
      a.share_after = parsed.at("share_after").get<double>();
      history.push_back(std::move(a));
    } catch (const nlohmann::json::exception& err) {
      fail(ErrorCode::Parse, std::string("invalid history line: ") + err.what());
    }
  }
  return history;
}

CoefficientState replay_history(double initial_c_reg, double initial_lambda,
                                const std::vector<CoefficientAction>& history) {
  CoefficientState state;
  state.c_reg = initial_c_reg;
  state.lambda_diag = initial_lambda;
  for (const CoefficientAction& a : history) state.record(a);
  return state;
}

}  // namespace korth
