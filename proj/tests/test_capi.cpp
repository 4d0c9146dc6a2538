#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest/doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "korth/korth.h"

namespace {

struct TensorHandle {
  korth_tensor* ptr = nullptr;
  ~TensorHandle() { korth_tensor_free(ptr); }
};

struct ArchHandle {
  korth_arch* ptr = nullptr;
  ~ArchHandle() { korth_arch_free(ptr); }
};

struct PlanHandle {
  korth_plan* ptr = nullptr;
  ~PlanHandle() { korth_plan_free(ptr); }
};

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { korth_string_free(ptr); }
  std::string str() const { return ptr ? std::string(ptr) : std::string(); }
};

korth_status make_diag21(TensorHandle& handle) {
  const double data[4] = {2, 0, 0, 1};
  return korth_tensor_create("diag21", 2, 2, 1, 1, data, &handle.ptr);
}

korth_status make_random(TensorHandle& handle, const char* name, uint32_t o,
                         uint32_t i, uint32_t kh, uint32_t kw,
                         std::uint64_t seed) {
  korth::rng::Engine eng(seed);
  std::vector<double> data(static_cast<std::size_t>(o) * i * kh * kw);
  for (double& v : data) v = 0.5 * eng.normal();
  return korth_tensor_create(name, o, i, kh, kw, data.data(), &handle.ptr);
}

korth_reg_spec spec_for(korth_variant variant) {
  korth_reg_spec spec;
  spec.variant = variant;
  spec.lambda_diag = 0.1;
  spec.power_iterations = 2;
  spec.seed = 3;
  return spec;
}

const char* kArchJson = R"([
  {"name": "dense0", "o": 16, "i": 8, "kh": 1, "kw": 1,
   "group": "net", "module_index": 0, "kind": "conv"}
])";

korth_plan_params default_params() {
  korth_plan_params params;
  params.intrinsic_dim = 30;
  params.attribute_dim = 4;
  params.max_transition_dim = 8;
  params.least_ratio = 1.0;
  params.pattern = KORTH_RAMP_LOG;
  params.trials = 10000;
  params.seed = 12;
  return params;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  REQUIRE(korth_version() != nullptr);
  CHECK(std::strlen(korth_version()) > 0);
  REQUIRE(korth_last_error() != nullptr);
}

TEST_CASE("tensor create, inspect, and free") {
  TensorHandle t;
  REQUIRE(make_diag21(t) == KORTH_OK);
  uint32_t o = 0, i = 0, kh = 0, kw = 0;
  REQUIRE(korth_tensor_dims(t.ptr, &o, &i, &kh, &kw) == KORTH_OK);
  CHECK(o == 2);
  CHECK(i == 2);
  CHECK(kh == 1);
  CHECK(kw == 1);
  CHECK(std::string(korth_tensor_name(t.ptr)) == "diag21");
  const double* data = korth_tensor_data(t.ptr);
  REQUIRE(data != nullptr);
  CHECK(data[0] == 2.0);
  CHECK(data[3] == 1.0);
}

TEST_CASE("bad tensor dimensions surface as validation with a message") {
  TensorHandle t;
  const double dummy[1] = {0.0};
  korth_status status =
      korth_tensor_create("bad", 0, 1, 1, 1, dummy, &t.ptr);
  CHECK(status == KORTH_VALIDATION);
  CHECK(std::strlen(korth_last_error()) > 0);
  CHECK(t.ptr == nullptr);
}

TEST_CASE("null pointers are rejected as invalid arguments") {
  CHECK(korth_tensor_create("x", 1, 1, 1, 1, nullptr, nullptr) ==
        KORTH_INVALID_ARGUMENT);
  korth_reg_result result;
  CHECK(korth_loss(nullptr, nullptr, nullptr, &result) ==
        KORTH_INVALID_ARGUMENT);
  CHECK(korth_plan_to_json(nullptr, nullptr) == KORTH_INVALID_ARGUMENT);
}

TEST_CASE("file round-trip in both precisions") {
  namespace fs = std::filesystem;
  TensorHandle t;
  REQUIRE(make_random(t, "rt", 4, 3, 2, 2, 5) == KORTH_OK);

  fs::path p64 = fs::temp_directory_path() / "korth_capi_rt64.ktnsr";
  REQUIRE(korth_tensor_save_file(t.ptr, p64.string().c_str(), 0) == KORTH_OK);
  TensorHandle back64;
  REQUIRE(korth_tensor_load_file(p64.string().c_str(), &back64.ptr) ==
          KORTH_OK);
  CHECK(std::memcmp(korth_tensor_data(back64.ptr), korth_tensor_data(t.ptr),
                    4 * 3 * 2 * 2 * sizeof(double)) == 0);

  fs::path p32 = fs::temp_directory_path() / "korth_capi_rt32.ktnsr";
  REQUIRE(korth_tensor_save_file(t.ptr, p32.string().c_str(), 1) == KORTH_OK);
  TensorHandle back32;
  REQUIRE(korth_tensor_load_file(p32.string().c_str(), &back32.ptr) ==
          KORTH_OK);
  const double* original = korth_tensor_data(t.ptr);
  const double* widened = korth_tensor_data(back32.ptr);
  for (int j = 0; j < 4 * 3 * 2 * 2; ++j)
    CHECK(widened[j] == static_cast<double>(static_cast<float>(original[j])));

  fs::remove(p64);
  fs::remove(p32);
  TensorHandle missing;
  CHECK(korth_tensor_load_file(p64.string().c_str(), &missing.ptr) ==
        KORTH_IO);
}

TEST_CASE("malformed bytes map to their specific status codes") {
  TensorHandle t;
  REQUIRE(make_diag21(t) == KORTH_OK);
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "korth_capi_bytes.ktnsr";
  REQUIRE(korth_tensor_save_file(t.ptr, p.string().c_str(), 0) == KORTH_OK);

  std::vector<uint8_t> bytes;
  {
    FILE* f = std::fopen(p.string().c_str(), "rb");
    REQUIRE(f != nullptr);
    uint8_t buf[4096];
    size_t n = std::fread(buf, 1, sizeof(buf), f);
    bytes.assign(buf, buf + n);
    std::fclose(f);
  }
  fs::remove(p);

  TensorHandle ok;
  REQUIRE(korth_tensor_load_bytes(bytes.data(), bytes.size(), "ok",
                                  &ok.ptr) == KORTH_OK);

  std::vector<uint8_t> bad = bytes;
  bad[0] = 'X';
  TensorHandle rejected;
  CHECK(korth_tensor_load_bytes(bad.data(), bad.size(), "bad",
                                &rejected.ptr) == KORTH_BAD_MAGIC);

  bad = bytes;
  bad[4] = 9;
  CHECK(korth_tensor_load_bytes(bad.data(), bad.size(), "bad",
                                &rejected.ptr) == KORTH_BAD_VERSION);

  bad = bytes;
  bad[5] = 7;
  CHECK(korth_tensor_load_bytes(bad.data(), bad.size(), "bad",
                                &rejected.ptr) == KORTH_BAD_DTYPE);

  CHECK(korth_tensor_load_bytes(bytes.data(), bytes.size() - 3, "bad",
                                &rejected.ptr) == KORTH_TRUNCATED);
}

TEST_CASE("loss values for the worked diagonal example") {
  TensorHandle t;
  REQUIRE(make_diag21(t) == KORTH_OK);

  korth_reg_result frob;
  korth_reg_spec spec = spec_for(KORTH_REG_FROBENIUS);
  REQUIRE(korth_loss(t.ptr, &spec, nullptr, &frob) == KORTH_OK);
  CHECK(frob.total == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(frob.degenerate == 0);

  spec = spec_for(KORTH_REG_SCALED_FROBENIUS);
  korth_reg_result scaled;
  REQUIRE(korth_loss(t.ptr, &spec, nullptr, &scaled) == KORTH_OK);
  CHECK(scaled.total == doctest::Approx(3.0 / std::sqrt(2.0)).epsilon(1e-12));

  spec = spec_for(KORTH_REG_SRIP);
  korth_reg_result srip;
  REQUIRE(korth_loss(t.ptr, &spec, nullptr, &srip) == KORTH_OK);
  CHECK(std::abs(srip.total - 3.0) <= 1e-12);

  const double diag12[4] = {1, 0, 0, 2};
  TensorHandle t2;
  REQUIRE(korth_tensor_create("diag12", 2, 2, 1, 1, diag12, &t2.ptr) ==
          KORTH_OK);
  spec = spec_for(KORTH_REG_DISENTANGLED);
  korth_reg_result dis;
  REQUIRE(korth_loss(t2.ptr, &spec, nullptr, &dis) == KORTH_OK);
  CHECK(dis.corr_component == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(dis.diag_component == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(dis.total == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("plans are only consumed by the relaxed variant") {
  TensorHandle t;
  REQUIRE(make_random(t, "dense0", 16, 8, 1, 1, 21) == KORTH_OK);
  ArchHandle arch;
  REQUIRE(korth_arch_parse(kArchJson, &arch.ptr) == KORTH_OK);
  PlanHandle plan;
  korth_plan_params params = default_params();
  REQUIRE(korth_plan_build(arch.ptr, &params, &plan.ptr) == KORTH_OK);

  korth_reg_spec spec = spec_for(KORTH_REG_FROBENIUS);
  korth_reg_result result;
  CHECK(korth_loss(t.ptr, &spec, plan.ptr, &result) ==
        KORTH_INVALID_ARGUMENT);

  spec = spec_for(KORTH_REG_RELAXED);
  CHECK(korth_loss(t.ptr, &spec, nullptr, &result) == KORTH_INVALID_ARGUMENT);

  REQUIRE(korth_loss(t.ptr, &spec, plan.ptr, &result) == KORTH_OK);
  korth_reg_result strict;
  spec = spec_for(KORTH_REG_DISENTANGLED);
  REQUIRE(korth_loss(t.ptr, &spec, nullptr, &strict) == KORTH_OK);
  CHECK(result.corr_component <= strict.corr_component + 1e-15);

  TensorHandle unknown;
  REQUIRE(make_random(unknown, "elsewhere", 16, 8, 1, 1, 22) == KORTH_OK);
  spec = spec_for(KORTH_REG_RELAXED);
  CHECK(korth_loss(unknown.ptr, &spec, plan.ptr, &result) ==
        KORTH_VALIDATION);
}

TEST_CASE("analytic gradient buffer for the frobenius example") {
  TensorHandle t;
  REQUIRE(make_diag21(t) == KORTH_OK);
  korth_reg_spec spec = spec_for(KORTH_REG_FROBENIUS);
  korth_reg_result result;
  double gradient[4] = {0, 0, 0, 0};
  REQUIRE(korth_loss_gradient(t.ptr, &spec, nullptr, &result, gradient) ==
          KORTH_OK);
  CHECK(gradient[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(gradient[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(gradient[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(gradient[3] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradient check passes for every variant through the C surface") {
  const korth_variant variants[] = {KORTH_REG_FROBENIUS,
                                    KORTH_REG_SCALED_FROBENIUS, KORTH_REG_SRIP,
                                    KORTH_REG_DISENTANGLED};
  std::uint64_t seed = 60;
  for (korth_variant variant : variants) {
    TensorHandle t;
    REQUIRE(make_random(t, "g", 4, 2, 2, 2, seed++) == KORTH_OK);
    korth_reg_spec spec = spec_for(variant);
    double rel = 1.0;
    REQUIRE(korth_gradient_check(t.ptr, &spec, nullptr, 1e-5, &rel) ==
            KORTH_OK);
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("frobenius decomposition identity through the C surface") {
  TensorHandle t;
  REQUIRE(make_random(t, "d", 6, 2, 2, 2, 90) == KORTH_OK);
  double direct = 0.0, decomposed = 0.0;
  REQUIRE(korth_frobenius_decomposition(t.ptr, &direct, &decomposed) ==
          KORTH_OK);
  CHECK(std::abs(direct - decomposed) <=
        1e-10 * std::max({std::abs(direct), std::abs(decomposed), 1e-300}));
}

TEST_CASE("near-orth reports and aggregation") {
  const double eye[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  TensorHandle t;
  REQUIRE(korth_tensor_create("id", 3, 3, 1, 1, eye, &t.ptr) == KORTH_OK);
  korth_report report;
  REQUIRE(korth_near_orth(t.ptr, &report) == KORTH_OK);
  CHECK(std::string(report.layer) == "id");
  CHECK(report.tril_mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.tril_std == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.diag_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.single_filter == 0);

  korth_report pair[2] = {report, report};
  pair[0].tril_mean = 0.02;
  pair[1].tril_mean = 0.04;
  korth_report merged;
  REQUIRE(korth_report_aggregate(pair, 2, &merged) == KORTH_OK);
  CHECK(merged.tril_mean == doctest::Approx(0.03).epsilon(1e-12));
}

TEST_CASE("plan build, entry access, and JSON round-trip") {
  ArchHandle arch;
  REQUIRE(korth_arch_parse(kArchJson, &arch.ptr) == KORTH_OK);
  CHECK(korth_arch_layer_count(arch.ptr) == 1);

  PlanHandle plan;
  korth_plan_params params = default_params();
  REQUIRE(korth_plan_build(arch.ptr, &params, &plan.ptr) == KORTH_OK);
  REQUIRE(korth_plan_entry_count(plan.ptr) == 1);

  korth_plan_entry entry;
  REQUIRE(korth_plan_entry_at(plan.ptr, 0, &entry) == KORTH_OK);
  CHECK(std::string(entry.layer) == "dense0");
  CHECK(entry.over_determined == 1);  // 16 filters in 8 dimensions
  CHECK(entry.structural_dim == 8);
  CHECK(entry.freed_count == 8);
  CHECK(entry.ratio == 1.0);
  CHECK(entry.exempt_positive + entry.exempt_negative == entry.exempt_total);
  double closed = 0.0;
  REQUIRE(korth_collision_closed_form(8, 8, &closed) == KORTH_OK);
  CHECK(closed == doctest::Approx(3.5));
  CHECK(std::abs(entry.expected_relaxed_pairs - closed) <= 1.0);

  CHECK(korth_plan_entry_at(plan.ptr, 5, &entry) == KORTH_INVALID_ARGUMENT);

  OwnedString json;
  REQUIRE(korth_plan_to_json(plan.ptr, &json.ptr) == KORTH_OK);
  PlanHandle reparsed;
  REQUIRE(korth_plan_parse(json.ptr, &reparsed.ptr) == KORTH_OK);
  OwnedString again;
  REQUIRE(korth_plan_to_json(reparsed.ptr, &again.ptr) == KORTH_OK);
  CHECK(json.str() == again.str());
}

TEST_CASE("simulation and transition helpers") {
  double expected = 0.0, se = 0.0;
  REQUIRE(korth_simulate(2, 2, 40000, 9, &expected, &se) == KORTH_OK);
  CHECK(std::abs(expected - 0.5) <= 3.0 * se);

  double closed = 0.0;
  REQUIRE(korth_collision_closed_form(64, 64, &closed) == KORTH_OK);
  CHECK(closed == doctest::Approx(31.5));

  uint32_t transition = 0;
  REQUIRE(korth_transition_dimension(100, 30, 60, &transition) == KORTH_OK);
  CHECK(transition == 60);

  double map[5];
  REQUIRE(korth_ratio_map(5, 0.5, KORTH_RAMP_LINEAR, map) == KORTH_OK);
  CHECK(map[0] == 0.5);
  CHECK(map[2] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(map[4] == 1.0);
}

TEST_CASE("coefficient balancing through the C surface") {
  double c = 0.0;
  int unchanged = 1;
  REQUIRE(korth_calibrate_coefficient(0.9, 1.0, 0.1, &c, &unchanged) ==
          KORTH_OK);
  CHECK(unchanged == 0);
  CHECK(c == doctest::Approx(0.1).epsilon(1e-14));

  REQUIRE(korth_calibrate_coefficient(0.9, 0.0, 0.1, &c, &unchanged) ==
          KORTH_OK);
  CHECK(unchanged == 1);

  double lambda = 0.0;
  REQUIRE(korth_calibrate_lambda(1.8, 0.3, 0.1, &lambda, &unchanged) ==
          KORTH_OK);
  CHECK(unchanged == 0);
  CHECK(lambda == doctest::Approx(6.0 / 9.0).epsilon(1e-12));

  double capped = 0.0;
  REQUIRE(korth_enforce_cap(0.9, 2.2, 0.5, 0.40, 0.35, &capped) == KORTH_OK);
  double share = capped * 0.5 / (0.9 + capped * 0.5);
  CHECK(std::abs(share - 0.35) <= 1e-12);

  uint32_t milestones[3] = {80, 120, 160};
  uint32_t epochs_out[5];
  size_t count = 0;
  REQUIRE(korth_adjustment_epochs(milestones, 3, 200, epochs_out, &count) ==
          KORTH_OK);
  REQUIRE(count == 5);
  const uint32_t expected_epochs[5] = {80, 100, 120, 140, 160};
  for (size_t j = 0; j < 5; ++j) CHECK(epochs_out[j] == expected_epochs[j]);
}

TEST_CASE("training through the C surface is deterministic") {
  const char* config = R"({
    "seed": 2,
    "epochs": 6,
    "batch_size": 16,
    "learning_rate": 0.05,
    "hidden_dims": [8],
    "dataset": {"classes": 2, "input_dim": 8, "samples_per_class": 60,
                "separation": 10.0},
    "regularizer": {"variant": "disentangled", "lambda": 0.1,
                    "coefficient": 0.5, "layer": "dense0"}
  })";
  OwnedString metrics1, summary1, metrics2, summary2;
  REQUIRE(korth_train(config, &metrics1.ptr, &summary1.ptr) == KORTH_OK);
  REQUIRE(korth_train(config, &metrics2.ptr, &summary2.ptr) == KORTH_OK);
  CHECK(metrics1.str() == metrics2.str());
  CHECK(summary1.str() == summary2.str());
  CHECK(metrics1.str().find("\"epoch\"") != std::string::npos);
  CHECK(summary1.str().find("\"final\"") != std::string::npos);

  double rel = 1.0;
  REQUIRE(korth_objective_gradient_check(config, 1e-5, &rel) == KORTH_OK);
  CHECK(rel <= 1e-4);

  OwnedString broken_metrics, broken_summary;
  CHECK(korth_train("{\"epochs\": 0}", &broken_metrics.ptr,
                    &broken_summary.ptr) != KORTH_OK);
  CHECK(std::strlen(korth_last_error()) > 0);
}

TEST_CASE("demo through the C surface reports the floor") {
  const char* config = R"({"seed": 0, "epochs": 20, "coefficients": [0.0, 1.0]})";
  OwnedString report;
  REQUIRE(korth_demo_inaccessible(config, &report.ptr) == KORTH_OK);
  std::string text = report.str();
  CHECK(text.find("floor") != std::string::npos);
  CHECK(text.find("rows") != std::string::npos);
}
