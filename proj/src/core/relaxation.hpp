#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/measures.hpp"
#include "core/tensor.hpp"

namespace korth {

// A kernel matrix with o rows in a d-dimensional row space can keep at most
// d filters mutually orthogonal; the classification drives how much of the
// residual correlation mass is structural rather than removable.
enum class Determinacy {
  OverDetermined,   // o > d: orthogonality is unreachable
  LessDetermined,   // o <= d: full orthogonality is possible
};

std::string to_string(Determinacy kind);

Determinacy classify(std::uint32_t out_channels, std::uint32_t background_dim);

// Effective dimensionality a layer's filters are expected to occupy once
// training settles: the larger of the attribute budget and the intrinsic
// estimate, clamped by the hard transition cap.
std::uint32_t transition_dimension(std::uint32_t attribute_dim,
                                   std::uint32_t intrinsic_dim,
                                   std::uint32_t max_transition_dim);

// Dimensionality of the subspace the filters actually compete over.
std::uint32_t structural_dimension(Determinacy kind, std::uint32_t out_channels,
                                   std::uint32_t background_dim,
                                   std::uint32_t transition_dim);

struct CollisionEstimate {
  double expected_pairs = 0.0;  // mean colliding pair count over the trials
  double std_error = 0.0;       // standard error of that mean
  std::uint32_t trials = 0;
};

// Monte Carlo estimate of the expected number of same-cell pairs when
// `freed_count` items land uniformly in `box_count` cells.
CollisionEstimate estimate_relaxed_pairs(std::uint32_t freed_count,
                                         std::uint32_t box_count,
                                         std::uint32_t trials,
                                         std::uint64_t seed);

// Closed form for the same quantity: C(f, 2) / b.
double collision_closed_form(std::uint32_t freed_count, std::uint32_t box_count);

enum class RampPattern { Linear, Log, Exp };

std::string to_string(RampPattern pattern);
RampPattern ramp_pattern_from_string(const std::string& text);

// Per-module scaling ratios rising from `least_ratio` at the first module to
// 1 at the last. A single module always gets ratio 1.
std::vector<double> build_ratio_map(std::uint32_t module_count,
                                    double least_ratio, RampPattern pattern);

struct ExemptionCounts {
  std::uint32_t total = 0;
  std::uint32_t positive = 0;
  std::uint32_t negative = 0;
};

ExemptionCounts exemption_counts(double expected_pairs, double ratio);

// Picks the `positive` largest strictly-positive and the `negative` smallest
// strictly-negative correlations as exempt pairs. Ties prefer the smaller
// pair index; requests beyond the available sign population are clamped.
PairMask build_exemption_mask(const CorrelationLowerTriangle& tril,
                              const ExemptionCounts& counts);

struct PlanParams {
  std::uint32_t intrinsic_dim = 30;
  std::uint32_t attribute_dim = 0;
  std::uint32_t max_transition_dim = 0;
  double least_ratio = 1.0;
  RampPattern pattern = RampPattern::Log;
  std::uint32_t trials = 10000;
  std::uint64_t seed = 0;
};

struct PlanEntry {
  std::string layer;
  Determinacy determinacy = Determinacy::LessDetermined;
  std::uint32_t structural_dim = 0;
  std::uint32_t freed_count = 0;
  double expected_relaxed_pairs = 0.0;
  double ratio = 1.0;
  ExemptionCounts counts;
};

struct RelaxationPlan {
  PlanParams params;
  std::vector<PlanEntry> entries;

  const PlanEntry* find(const std::string& layer_name) const;
};

RelaxationPlan build_plan(const std::vector<LayerDescriptor>& layers,
                          const PlanParams& params);

std::string plan_to_json(const RelaxationPlan& plan);
RelaxationPlan plan_from_json(const std::string& text);
RelaxationPlan plan_from_file(const std::string& path);

}  // namespace korth
