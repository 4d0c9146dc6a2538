#include "core/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace korth {

namespace {

// Rounds to `digits` significant digits so serialized plans are stable
// across platforms.
double round_sig(double value, int digits) {
  if (value == 0.0 || !std::isfinite(value)) return value;
  const double magnitude = std::floor(std::log10(std::fabs(value)));
  const double scale = std::pow(10.0, digits - 1 - magnitude);
  return std::round(value * scale) / scale;
}

}  // namespace

std::string to_string(Determinacy kind) {
  return kind == Determinacy::OverDetermined ? "over-determined"
                                             : "less-determined";
}

static Determinacy determinacy_from_string(const std::string& text) {
  if (text == "over-determined") return Determinacy::OverDetermined;
  if (text == "less-determined") return Determinacy::LessDetermined;
  fail(ErrorCode::Parse, "unknown determinacy class: " + text);
}

Determinacy classify(std::uint32_t out_channels, std::uint32_t background_dim) {
  return out_channels > background_dim ? Determinacy::OverDetermined
                                       : Determinacy::LessDetermined;
}

std::uint32_t transition_dimension(std::uint32_t attribute_dim,
                                   std::uint32_t intrinsic_dim,
                                   std::uint32_t max_transition_dim) {
  if (attribute_dim == 0 || intrinsic_dim == 0 || max_transition_dim == 0) {
    fail(ErrorCode::InvalidArgument,
         "transition dimensions must all be positive");
  }
  return std::min(std::max(attribute_dim, intrinsic_dim), max_transition_dim);
}

std::uint32_t structural_dimension(Determinacy kind, std::uint32_t out_channels,
                                   std::uint32_t background_dim,
                                   std::uint32_t transition_dim) {
  if (kind == Determinacy::OverDetermined) return background_dim;
  return std::min(transition_dim, out_channels);
}

CollisionEstimate estimate_relaxed_pairs(std::uint32_t freed_count,
                                         std::uint32_t box_count,
                                         std::uint32_t trials,
                                         std::uint64_t seed) {
  if (box_count == 0) fail(ErrorCode::InvalidArgument, "box count must be positive");
  if (trials == 0) fail(ErrorCode::InvalidArgument, "trial count must be positive");
  CollisionEstimate estimate;
  estimate.trials = trials;
  if (freed_count < 2) return estimate;

  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<std::uint32_t> occupancy(box_count);
  for (std::uint32_t t = 0; t < trials; ++t) {
    // Each trial seeds its own generator so results are independent of
    // evaluation order.
    rng::Engine engine(rng::mix(seed, t));
    std::fill(occupancy.begin(), occupancy.end(), 0u);
    for (std::uint32_t item = 0; item < freed_count; ++item) {
      ++occupancy[engine.below(box_count)];
    }
    double pairs = 0.0;
    for (std::uint32_t c : occupancy) {
      pairs += 0.5 * static_cast<double>(c) * static_cast<double>(c - (c > 0));
    }
    sum += pairs;
    sum_sq += pairs * pairs;
  }
  const double n = static_cast<double>(trials);
  estimate.expected_pairs = sum / n;
  if (trials >= 2) {
    const double variance =
        std::max(0.0, (sum_sq - n * estimate.expected_pairs *
                                    estimate.expected_pairs) /
                          (n - 1.0));
    estimate.std_error = std::sqrt(variance / n);
  }
  return estimate;
}

double collision_closed_form(std::uint32_t freed_count,
                             std::uint32_t box_count) {
  if (box_count == 0) fail(ErrorCode::InvalidArgument, "box count must be positive");
  if (freed_count < 2) return 0.0;
  const double f = static_cast<double>(freed_count);
  return f * (f - 1.0) / 2.0 / static_cast<double>(box_count);
}

std::string to_string(RampPattern pattern) {
  switch (pattern) {
    case RampPattern::Linear: return "linear";
    case RampPattern::Log: return "log";
    case RampPattern::Exp: return "exp";
  }
  fail(ErrorCode::InvalidArgument, "unknown ramp pattern");
}

RampPattern ramp_pattern_from_string(const std::string& text) {
  if (text == "linear") return RampPattern::Linear;
  if (text == "log") return RampPattern::Log;
  if (text == "exp") return RampPattern::Exp;
  fail(ErrorCode::InvalidArgument, "unknown ramp pattern: " + text);
}

std::vector<double> build_ratio_map(std::uint32_t module_count,
                                    double least_ratio, RampPattern pattern) {
  if (module_count == 0) {
    fail(ErrorCode::InvalidArgument, "module count must be positive");
  }
  if (!(least_ratio >= 0.0 && least_ratio <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "least ratio must lie in [0, 1]");
  }
  if (module_count == 1) return {1.0};

  const std::uint32_t last = module_count - 1;
  const double span = 1.0 - least_ratio;
  std::vector<double> ratios(module_count);
  for (std::uint32_t i = 0; i <= last; ++i) {
    if (i == 0) {
      ratios[i] = least_ratio;
      continue;
    }
    double fraction = 0.0;
    switch (pattern) {
      case RampPattern::Linear:
        fraction = static_cast<double>(i) / static_cast<double>(last);
        break;
      case RampPattern::Log:
        fraction = std::log1p(static_cast<double>(i)) /
                   std::log1p(static_cast<double>(last));
        break;
      case RampPattern::Exp:
        fraction = 1.0 - std::exp(-static_cast<double>(i) /
                                  static_cast<double>(last));
        break;
    }
    // Linear and log ramps end exactly at 1; keeping that exact avoids a
    // final value perturbed by rounding in least + (1-least).
    if (i == last && pattern != RampPattern::Exp) {
      ratios[i] = 1.0;
    } else {
      ratios[i] = least_ratio + span * fraction;
    }
  }
  return ratios;
}

ExemptionCounts exemption_counts(double expected_pairs, double ratio) {
  if (!(expected_pairs >= 0.0)) {
    fail(ErrorCode::InvalidArgument, "expected pair count must be non-negative");
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "ratio must lie in [0, 1]");
  }
  ExemptionCounts counts;
  counts.total = static_cast<std::uint32_t>(std::llround(expected_pairs * ratio));
  counts.positive = (counts.total + 1) / 2;
  counts.negative = counts.total / 2;
  return counts;
}

PairMask build_exemption_mask(const CorrelationLowerTriangle& tril,
                              const ExemptionCounts& counts) {
  struct Ranked {
    double value;
    std::size_t index;
  };
  std::vector<Ranked> positives;
  std::vector<Ranked> negatives;
  for (std::size_t p = 0; p < tril.entries.size(); ++p) {
    const double v = tril.entries[p];
    if (v > 0.0) positives.push_back({v, p});
    else if (v < 0.0) negatives.push_back({v, p});
  }
  std::sort(positives.begin(), positives.end(), [](const Ranked& a, const Ranked& b) {
    return a.value != b.value ? a.value > b.value : a.index < b.index;
  });
  std::sort(negatives.begin(), negatives.end(), [](const Ranked& a, const Ranked& b) {
    return a.value != b.value ? a.value < b.value : a.index < b.index;
  });

  PairMask mask;
  mask.order = tril.order;
  const std::size_t take_pos =
      std::min<std::size_t>(counts.positive, positives.size());
  const std::size_t take_neg =
      std::min<std::size_t>(counts.negative, negatives.size());
  mask.exempt.reserve(take_pos + take_neg);
  for (std::size_t i = 0; i < take_pos; ++i) {
    mask.exempt.push_back(static_cast<std::uint32_t>(positives[i].index));
  }
  for (std::size_t i = 0; i < take_neg; ++i) {
    mask.exempt.push_back(static_cast<std::uint32_t>(negatives[i].index));
  }
  std::sort(mask.exempt.begin(), mask.exempt.end());
  return mask;
}

const PlanEntry* RelaxationPlan::find(const std::string& layer_name) const {
  for (const PlanEntry& entry : entries) {
    if (entry.layer == layer_name) return &entry;
  }
  return nullptr;
}

RelaxationPlan build_plan(const std::vector<LayerDescriptor>& layers,
                          const PlanParams& params) {
  if (params.trials == 0) {
    fail(ErrorCode::InvalidArgument, "trial count must be positive");
  }
  const std::uint32_t transition = transition_dimension(
      params.attribute_dim, params.intrinsic_dim, params.max_transition_dim);

  // Ratio maps are per group; a group's module count is one past its highest
  // module index (indices are validated contiguous at architecture load).
  std::map<std::string, std::uint32_t> group_counts;
  for (const LayerDescriptor& layer : layers) {
    std::uint32_t& count = group_counts[layer.group];
    count = std::max(count, layer.module_index + 1);
  }
  std::map<std::string, std::vector<double>> group_ratios;
  for (const auto& [group, count] : group_counts) {
    group_ratios[group] =
        build_ratio_map(count, params.least_ratio, params.pattern);
  }

  RelaxationPlan plan;
  plan.params = params;
  plan.entries.reserve(layers.size());
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    const LayerDescriptor& layer = layers[idx];
    const std::uint32_t d = layer.background_dim();
    PlanEntry entry;
    entry.layer = layer.name;
    entry.determinacy = classify(layer.out_channels, d);
    entry.structural_dim = structural_dimension(entry.determinacy,
                                                layer.out_channels, d,
                                                transition);
    entry.freed_count = layer.out_channels > entry.structural_dim
                            ? layer.out_channels - entry.structural_dim
                            : 0;
    const CollisionEstimate estimate = estimate_relaxed_pairs(
        entry.freed_count, entry.structural_dim, params.trials,
        rng::mix(params.seed, static_cast<std::uint64_t>(idx)));
    entry.expected_relaxed_pairs = estimate.expected_pairs;
    entry.ratio = entry.determinacy == Determinacy::OverDetermined
                      ? 1.0
                      : group_ratios.at(layer.group).at(layer.module_index);
    entry.counts = exemption_counts(entry.expected_relaxed_pairs, entry.ratio);
    plan.entries.push_back(std::move(entry));
  }
  return plan;
}

std::string plan_to_json(const RelaxationPlan& plan) {
  nlohmann::ordered_json array = nlohmann::ordered_json::array();
  for (const PlanEntry& entry : plan.entries) {
    nlohmann::ordered_json item;
    item["layer"] = entry.layer;
    item["determinacy"] = to_string(entry.determinacy);
    item["structural_dim"] = entry.structural_dim;
    item["freed_count"] = entry.freed_count;
    item["expected_relaxed_pairs"] = round_sig(entry.expected_relaxed_pairs, 6);
    item["ratio"] = round_sig(entry.ratio, 6);
    item["exempt_total"] = entry.counts.total;
    item["exempt_positive"] = entry.counts.positive;
    item["exempt_negative"] = entry.counts.negative;
    array.push_back(std::move(item));
  }
  return array.dump(2) + "\n";
}

RelaxationPlan plan_from_json(const std::string& text) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid plan JSON: ") + err.what());
  }
  if (!parsed.is_array()) {
    fail(ErrorCode::Parse, "plan JSON must be an array of layer entries");
  }
  RelaxationPlan plan;
  plan.entries.reserve(parsed.size());
  try {
    for (const auto& item : parsed) {
      PlanEntry entry;
      entry.layer = item.at("layer").get<std::string>();
      entry.determinacy =
          determinacy_from_string(item.at("determinacy").get<std::string>());
      entry.structural_dim = item.at("structural_dim").get<std::uint32_t>();
      entry.freed_count = item.at("freed_count").get<std::uint32_t>();
      entry.expected_relaxed_pairs =
          item.at("expected_relaxed_pairs").get<double>();
      entry.ratio = item.at("ratio").get<double>();
      entry.counts.total = item.at("exempt_total").get<std::uint32_t>();
      entry.counts.positive = item.at("exempt_positive").get<std::uint32_t>();
      entry.counts.negative = item.at("exempt_negative").get<std::uint32_t>();
      plan.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid plan entry: ") + err.what());
  }
  for (const PlanEntry& entry : plan.entries) {
    if (entry.counts.positive + entry.counts.negative != entry.counts.total) {
      fail(ErrorCode::Validation,
           "exemption split does not sum to total for layer " + entry.layer);
    }
    if (!(entry.ratio >= 0.0 && entry.ratio <= 1.0)) {
      fail(ErrorCode::Validation, "ratio out of [0, 1] for layer " + entry.layer);
    }
    if (!(entry.expected_relaxed_pairs >= 0.0)) {
      fail(ErrorCode::Validation,
           "negative expected pair count for layer " + entry.layer);
    }
  }
  return plan;
}

RelaxationPlan plan_from_file(const std::string& path) {
  return plan_from_json(read_text_file(path));
}

}  // namespace korth
