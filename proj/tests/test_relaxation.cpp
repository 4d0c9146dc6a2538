#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/measures.hpp"
#include "core/relaxation.hpp"
#include "support.hpp"

using korth::CollisionEstimate;
using korth::CorrelationLowerTriangle;
using korth::Determinacy;
using korth::ExemptionCounts;
using korth::LayerDescriptor;
using korth::PairMask;
using korth::PlanParams;
using korth::RampPattern;
using korth::RelaxationPlan;

TEST_CASE("classification is over-determined exactly when o exceeds d") {
  CHECK(korth::classify(128, 64) == Determinacy::OverDetermined);
  CHECK(korth::classify(16, 144) == Determinacy::LessDetermined);
  CHECK(korth::classify(64, 64) == Determinacy::LessDetermined);  // boundary
}

TEST_CASE("determinacy names round-trip through to_string") {
  CHECK(korth::to_string(Determinacy::OverDetermined) == "over-determined");
  CHECK(korth::to_string(Determinacy::LessDetermined) == "less-determined");
}

TEST_CASE("transition dimension is min(max(attribute, intrinsic), cap)") {
  CHECK(korth::transition_dimension(100, 30, 100) == 100);
  CHECK(korth::transition_dimension(10, 30, 30) == 30);
  CHECK(korth::transition_dimension(100, 30, 60) == 60);
  CHECK(korth::transition_dimension(100, 30, 80) == 80);
}

TEST_CASE("structural dimension by determinacy class") {
  // Over-determined layers keep d structural filters and free the rest.
  CHECK(korth::structural_dimension(Determinacy::OverDetermined, 128, 64,
                                    100) == 64);
  // Less-determined layers settle at the transition dimension, capped at o.
  CHECK(korth::structural_dimension(Determinacy::LessDetermined, 160, 1440,
                                    100) == 100);
  CHECK(korth::structural_dimension(Determinacy::LessDetermined, 16, 144,
                                    100) == 16);
}

TEST_CASE("no pairs exist with fewer than two freed filters") {
  for (std::uint32_t f : {0u, 1u}) {
    CollisionEstimate est = korth::estimate_relaxed_pairs(f, 7, 100, 0);
    CHECK(est.expected_pairs == 0.0);
    CHECK(est.std_error == 0.0);
  }
  CHECK(korth::collision_closed_form(0, 5) == 0.0);
  CHECK(korth::collision_closed_form(1, 5) == 0.0);
}

TEST_CASE("two items in two boxes collide half the time") {
  CollisionEstimate est = korth::estimate_relaxed_pairs(2, 2, 40000, 9);
  CHECK(korth::collision_closed_form(2, 2) == 0.5);
  CHECK(std::abs(est.expected_pairs - 0.5) <= 3.0 * est.std_error);
}

TEST_CASE("monte carlo estimate brackets the closed form within 3 SE") {
  const std::pair<std::uint32_t, std::uint32_t> grid[] = {
      {64, 64}, {144, 16}, {60, 100}, {2, 2}, {10, 3}};
  std::uint64_t seed = 31;
  for (auto [f, b] : grid) {
    CollisionEstimate est = korth::estimate_relaxed_pairs(f, b, 10000, seed++);
    double truth = korth::collision_closed_form(f, b);
    CHECK(est.trials == 10000);
    CHECK(est.std_error > 0.0);
    CHECK(std::abs(est.expected_pairs - truth) <= 3.0 * est.std_error);
  }
  CHECK(korth::collision_closed_form(64, 64) == doctest::Approx(31.5));
  CHECK(korth::collision_closed_form(144, 16) == doctest::Approx(643.5));
}

TEST_CASE("monte carlo is deterministic in the seed") {
  CollisionEstimate a = korth::estimate_relaxed_pairs(20, 8, 500, 77);
  CollisionEstimate b = korth::estimate_relaxed_pairs(20, 8, 500, 77);
  CHECK(a.expected_pairs == b.expected_pairs);
  CHECK(a.std_error == b.std_error);
  CollisionEstimate c = korth::estimate_relaxed_pairs(20, 8, 500, 78);
  CHECK(a.expected_pairs != c.expected_pairs);
}

TEST_CASE("ratio map formulas and endpoints") {
  auto linear = korth::build_ratio_map(5, 0.5, RampPattern::Linear);
  REQUIRE(linear.size() == 5);
  CHECK(linear[0] == 0.5);
  CHECK(linear[2] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(linear[4] == 1.0);  // exact endpoint

  auto log_map = korth::build_ratio_map(9, 0.2, RampPattern::Log);
  REQUIRE(log_map.size() == 9);
  CHECK(log_map[0] == 0.2);
  CHECK(log_map[8] == 1.0);
  CHECK(log_map[3] ==
        doctest::Approx(0.2 + 0.8 * std::log(4.0) / std::log(9.0))
            .epsilon(1e-14));

  auto exp_map = korth::build_ratio_map(2, 0.0, RampPattern::Exp);
  REQUIRE(exp_map.size() == 2);
  CHECK(exp_map[0] == 0.0);
  CHECK(std::abs(exp_map[1] - (1.0 - std::exp(-1.0))) <= 1e-12);
  CHECK(exp_map[1] < 1.0);  // exp never reaches 1
}

TEST_CASE("single module group always gets ratio 1") {
  for (RampPattern p :
       {RampPattern::Linear, RampPattern::Log, RampPattern::Exp}) {
    auto map = korth::build_ratio_map(1, 0.3, p);
    REQUIRE(map.size() == 1);
    CHECK(map[0] == 1.0);
  }
}

TEST_CASE("ratio maps are non-decreasing for every pattern") {
  korth::rng::Engine eng(123);
  for (int trial = 0; trial < 20; ++trial) {
    double least = eng.uniform();
    std::uint32_t count = 2 + eng.below(12);
    for (RampPattern p :
         {RampPattern::Linear, RampPattern::Log, RampPattern::Exp}) {
      auto map = korth::build_ratio_map(count, least, p);
      REQUIRE(map.size() == count);
      CHECK(map.front() == least);
      for (std::size_t j = 1; j < map.size(); ++j)
        CHECK(map[j] >= map[j - 1]);
      for (double v : map) {
        CHECK(v >= least - 1e-15);
        CHECK(v <= 1.0 + 1e-15);
      }
    }
  }
}

TEST_CASE("ramp pattern names round-trip") {
  for (RampPattern p :
       {RampPattern::Linear, RampPattern::Log, RampPattern::Exp})
    CHECK(korth::ramp_pattern_from_string(korth::to_string(p)) == p);
  CHECK_THROWS_AS(korth::ramp_pattern_from_string("cubic"), korth::Error);
}

TEST_CASE("exemption counts round half away from zero and split evenly") {
  ExemptionCounts a = korth::exemption_counts(31.5, 1.0);
  CHECK(a.total == 32);
  CHECK(a.positive == 16);
  CHECK(a.negative == 16);

  ExemptionCounts b = korth::exemption_counts(5.0, 0.0);
  CHECK(b.total == 0);
  CHECK(b.positive == 0);
  CHECK(b.negative == 0);

  ExemptionCounts c = korth::exemption_counts(3.4, 1.0);
  CHECK(c.total == 3);
  CHECK(c.positive == 2);  // positive side gets the extra pair
  CHECK(c.negative == 1);

  ExemptionCounts d = korth::exemption_counts(2.5, 1.0);
  CHECK(d.total == 3);  // half rounds away from zero
}

TEST_CASE("exemption mask picks extreme correlations per sign") {
  CorrelationLowerTriangle tril;
  tril.order = 4;  // 6 pairs; only the first 5 carry signal
  tril.entries = {0.9, -0.8, 0.1, -0.05, 0.3, 0.0};
  PairMask mask = korth::build_exemption_mask(tril, {2, 1, 1});
  REQUIRE(mask.exempt.size() == 2);
  CHECK(mask.exempt[0] == 0);  // 0.9, the largest positive
  CHECK(mask.exempt[1] == 1);  // -0.8, the smallest negative
  CHECK(mask.order == 4);
}

TEST_CASE("empty request gives an empty mask") {
  CorrelationLowerTriangle tril;
  tril.order = 3;
  tril.entries = {0.5, -0.5, 0.2};
  PairMask mask = korth::build_exemption_mask(tril, {0, 0, 0});
  CHECK(mask.exempt.empty());
}

TEST_CASE("requests beyond the available sign population are clamped") {
  CorrelationLowerTriangle tril;
  tril.order = 3;
  tril.entries = {0.5, 0.4, 0.3};  // no negatives at all
  PairMask mask = korth::build_exemption_mask(tril, {3, 1, 2});
  REQUIRE(mask.exempt.size() == 1);
  CHECK(mask.exempt[0] == 0);
  // Zeros are neither positive nor negative and are never exempted.
  CorrelationLowerTriangle zeros;
  zeros.order = 3;
  zeros.entries = {0.0, 0.0, 0.0};
  CHECK(korth::build_exemption_mask(zeros, {2, 1, 1}).exempt.empty());
}

TEST_CASE("ties between equal correlations prefer the smaller pair index") {
  CorrelationLowerTriangle tril;
  tril.order = 4;
  tril.entries = {0.5, 0.5, 0.5, -0.2, -0.2, 0.1};
  PairMask mask = korth::build_exemption_mask(tril, {2, 1, 1});
  REQUIRE(mask.exempt.size() == 2);
  CHECK(mask.exempt[0] == 0);  // first of the tied 0.5 entries
  CHECK(mask.exempt[1] == 3);  // first of the tied -0.2 entries
}

TEST_CASE("masked correlation loss never exceeds the unmasked loss") {
  korth::RegularizerSpec strict;
  strict.variant = korth::RegVariant::Disentangled;
  std::uint64_t seed = 900;
  for (int trial = 0; trial < 10; ++trial) {
    korth::KernelMatrix k = testsupport::random_kernel(8, 5, seed++);
    double unmasked = korth::disentangled_loss(k, strict).corr_component;

    CorrelationLowerTriangle tril = korth::correlation_tril(k);
    ExemptionCounts counts{4, 2, 2};
    korth::RegularizerSpec relaxed;
    relaxed.variant = korth::RegVariant::RelaxedDisentangled;
    relaxed.exemption_mask = korth::build_exemption_mask(tril, counts);
    double masked = korth::disentangled_loss(k, relaxed).corr_component;
    CHECK(masked <= unmasked + 1e-15);
  }
}

namespace {

std::vector<LayerDescriptor> wrn_like_layers() {
  std::vector<LayerDescriptor> layers;
  LayerDescriptor stem;
  stem.name = "stem";
  stem.out_channels = 16;
  stem.in_channels = 3;
  stem.kernel_h = 3;
  stem.kernel_w = 3;
  stem.group = "stem";
  stem.module_index = 0;
  stem.kind = korth::LayerKind::Stem;
  layers.push_back(stem);

  for (std::uint32_t j = 0; j < 3; ++j) {
    LayerDescriptor conv;
    conv.name = "g1_conv" + std::to_string(j);
    conv.out_channels = 160;
    conv.in_channels = 160;
    conv.kernel_h = 3;
    conv.kernel_w = 3;
    conv.group = "g1";
    conv.module_index = j;
    conv.kind = korth::LayerKind::Conv;
    layers.push_back(conv);
  }

  LayerDescriptor down;
  down.name = "downsample";
  down.out_channels = 160;
  down.in_channels = 16;
  down.kernel_h = 1;
  down.kernel_w = 1;
  down.group = "down";
  down.module_index = 0;
  down.kind = korth::LayerKind::Downsample;
  layers.push_back(down);
  return layers;
}

PlanParams demo_params() {
  PlanParams params;
  params.attribute_dim = 100;
  params.intrinsic_dim = 30;
  params.max_transition_dim = 100;
  params.least_ratio = 0.2;
  params.pattern = RampPattern::Log;
  params.trials = 10000;
  params.seed = 4;
  return params;
}

}  // namespace

TEST_CASE("plan classifies and sizes a WRN-like stack") {
  RelaxationPlan plan = korth::build_plan(wrn_like_layers(), demo_params());
  REQUIRE(plan.entries.size() == 5);

  const korth::PlanEntry* stem = plan.find("stem");
  REQUIRE(stem != nullptr);
  CHECK(stem->determinacy == Determinacy::LessDetermined);  // 16 <= 27
  CHECK(stem->structural_dim == 16);  // transition 100 capped at o
  CHECK(stem->freed_count == 0);
  CHECK(stem->expected_relaxed_pairs == 0.0);
  CHECK(stem->counts.total == 0);  // freed 0 leaves the entry inert

  const korth::PlanEntry* conv = plan.find("g1_conv0");
  REQUIRE(conv != nullptr);
  CHECK(conv->determinacy == Determinacy::LessDetermined);  // 160 <= 1440
  CHECK(conv->structural_dim == 100);
  CHECK(conv->freed_count == 60);
  CHECK(conv->ratio == doctest::Approx(0.2).epsilon(1e-12));

  const korth::PlanEntry* down = plan.find("downsample");
  REQUIRE(down != nullptr);
  CHECK(down->determinacy == Determinacy::OverDetermined);  // 160 > 16
  CHECK(down->structural_dim == 16);
  CHECK(down->freed_count == 144);
  CHECK(down->ratio == 1.0);  // over-determined layers are never scaled down
  double closed = korth::collision_closed_form(144, 16);
  CHECK(std::abs(down->expected_relaxed_pairs - closed) <= 3.0);
  CHECK(down->counts.positive + down->counts.negative == down->counts.total);
}

TEST_CASE("ratios within a conv group follow the log ramp") {
  RelaxationPlan plan = korth::build_plan(wrn_like_layers(), demo_params());
  const korth::PlanEntry* c0 = plan.find("g1_conv0");
  const korth::PlanEntry* c1 = plan.find("g1_conv1");
  const korth::PlanEntry* c2 = plan.find("g1_conv2");
  REQUIRE((c0 && c1 && c2));
  CHECK(c0->ratio == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(c1->ratio ==
        doctest::Approx(0.2 + 0.8 * std::log(2.0) / std::log(3.0))
            .epsilon(1e-12));
  CHECK(c2->ratio == 1.0);
  CHECK(c0->ratio < c1->ratio);
  CHECK(c1->ratio < c2->ratio);
}

TEST_CASE("plans serialize deterministically and round-trip") {
  RelaxationPlan a = korth::build_plan(wrn_like_layers(), demo_params());
  RelaxationPlan b = korth::build_plan(wrn_like_layers(), demo_params());
  std::string ja = korth::plan_to_json(a);
  std::string jb = korth::plan_to_json(b);
  CHECK(ja == jb);  // byte-identical for identical inputs

  RelaxationPlan back = korth::plan_from_json(ja);
  REQUIRE(back.entries.size() == a.entries.size());
  for (std::size_t j = 0; j < a.entries.size(); ++j) {
    CHECK(back.entries[j].layer == a.entries[j].layer);
    CHECK(back.entries[j].determinacy == a.entries[j].determinacy);
    CHECK(back.entries[j].structural_dim == a.entries[j].structural_dim);
    CHECK(back.entries[j].freed_count == a.entries[j].freed_count);
    CHECK(back.entries[j].counts.total == a.entries[j].counts.total);
    CHECK(back.entries[j].counts.positive == a.entries[j].counts.positive);
    CHECK(back.entries[j].counts.negative == a.entries[j].counts.negative);
  }
  // Serializing the parsed plan reproduces the same bytes.
  CHECK(korth::plan_to_json(back) == ja);
}

TEST_CASE("a different seed changes the monte carlo aspect only") {
  PlanParams p1 = demo_params();
  PlanParams p2 = demo_params();
  p2.seed = 5;
  RelaxationPlan a = korth::build_plan(wrn_like_layers(), p1);
  RelaxationPlan b = korth::build_plan(wrn_like_layers(), p2);
  const korth::PlanEntry* da = a.find("downsample");
  const korth::PlanEntry* db = b.find("downsample");
  REQUIRE((da && db));
  CHECK(da->expected_relaxed_pairs != db->expected_relaxed_pairs);
  CHECK(da->structural_dim == db->structural_dim);
  CHECK(da->ratio == db->ratio);
}

TEST_CASE("plan JSON validation rejects inconsistent entries") {
  RelaxationPlan plan = korth::build_plan(wrn_like_layers(), demo_params());
  std::string good = korth::plan_to_json(plan);

  std::string bad_split = good;
  auto at = bad_split.find("\"exempt_positive\"");
  REQUIRE(at != std::string::npos);
  CHECK_THROWS_AS(korth::plan_from_json("not json"), korth::Error);
  CHECK_THROWS_AS(korth::plan_from_json("[{\"layer\": \"x\"}]"), korth::Error);
}

TEST_CASE("exemption counts never exceed the available pair count") {
  // 160 freed filters in 16 boxes gives far more expected pairs than a
  // 16-filter layer has; the mask build clamps to what exists.
  korth::KernelMatrix k = testsupport::random_kernel(16, 8, 321);
  CorrelationLowerTriangle tril = korth::correlation_tril(k);
  ExemptionCounts counts = korth::exemption_counts(500.0, 1.0);
  CHECK(counts.total == 500);
  PairMask mask = korth::build_exemption_mask(tril, counts);
  CHECK(mask.exempt.size() <= CorrelationLowerTriangle::pair_count(16));
}
