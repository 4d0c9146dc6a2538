// korth: command-line surface over the shared library's C API.
//
// Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
// inputs), 3 numerical failure (degenerate input, failed check).

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "korth/korth.h"

namespace {

using nlohmann::ordered_json;

int exit_code_for(korth_status status) {
  switch (status) {
    case KORTH_OK: return 0;
    case KORTH_INVALID_ARGUMENT: return 1;
    case KORTH_DEGENERATE:
    case KORTH_NUMERIC: return 3;
    default: return 2;
  }
}

int report_failure(korth_status status) {
  std::fprintf(stderr, "error: %s\n", korth_last_error());
  return exit_code_for(status);
}

// For commands whose arguments arrive inside a config file, rejected values
// are data errors, not command-line usage errors.
int report_config_failure(korth_status status) {
  std::fprintf(stderr, "error: %s\n", korth_last_error());
  return status == KORTH_INVALID_ARGUMENT ? 2 : exit_code_for(status);
}

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
};

korth_variant variant_from(const std::string& name) {
  if (name == "frobenius") return KORTH_REG_FROBENIUS;
  if (name == "scaled") return KORTH_REG_SCALED_FROBENIUS;
  if (name == "srip") return KORTH_REG_SRIP;
  if (name == "disentangled") return KORTH_REG_DISENTANGLED;
  return KORTH_REG_RELAXED;
}

korth_ramp ramp_from(const std::string& name) {
  if (name == "linear") return KORTH_RAMP_LINEAR;
  if (name == "exp") return KORTH_RAMP_EXP;
  return KORTH_RAMP_LOG;
}

std::string formatted_stats(const korth_report& r) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f/%.2f", r.tril_mean,
                r.tril_std, r.diag_mean);
  return buf;
}

bool write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return static_cast<bool>(out);
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> files;
  bool group_by_shape = false;
  bool json = false;
};

int run_report(const ReportArgs& args) {
  struct Row {
    korth_report report;
    uint32_t o = 0;
    uint32_t d = 0;
  };
  std::vector<Row> rows;
  for (const std::string& file : args.files) {
    TensorHandle tensor;
    korth_status status = korth_tensor_load_file(file.c_str(), &tensor.ptr);
    if (status != KORTH_OK) return report_failure(status);
    Row row;
    uint32_t i = 0, kh = 0, kw = 0;
    korth_tensor_dims(tensor.ptr, &row.o, &i, &kh, &kw);
    row.d = i * kh * kw;
    status = korth_near_orth(tensor.ptr, &row.report);
    if (status != KORTH_OK) return report_failure(status);
    rows.push_back(row);
  }

  std::vector<std::pair<std::string, korth_report>> output;
  if (args.group_by_shape) {
    std::vector<std::pair<uint64_t, std::vector<korth_report>>> groups;
    for (const Row& row : rows) {
      const uint64_t key = (static_cast<uint64_t>(row.o) << 32) | row.d;
      auto it = groups.begin();
      for (; it != groups.end(); ++it)
        if (it->first == key) break;
      if (it == groups.end()) {
        groups.push_back({key, {}});
        it = groups.end() - 1;
      }
      it->second.push_back(row.report);
    }
    for (const auto& [key, members] : groups) {
      korth_report combined;
      const korth_status status =
          korth_report_aggregate(members.data(), members.size(), &combined);
      if (status != KORTH_OK) return report_failure(status);
      char label[64];
      std::snprintf(label, sizeof(label), "[%" PRIu32 ",%" PRIu32 "] (n=%zu)",
                    static_cast<uint32_t>(key >> 32),
                    static_cast<uint32_t>(key & 0xffffffffu), members.size());
      output.emplace_back(label, combined);
    }
  } else {
    for (const Row& row : rows) output.emplace_back(row.report.layer, row.report);
  }

  if (args.json) {
    ordered_json doc = ordered_json::array();
    for (const auto& [label, r] : output) {
      ordered_json item;
      item["layer"] = label;
      item["tril_mean"] = r.tril_mean;
      item["tril_std"] = r.tril_std;
      item["diag_mean"] = r.diag_mean;
      item["formatted"] = formatted_stats(r);
      doc.push_back(std::move(item));
    }
    std::printf("%s\n", doc.dump(2).c_str());
  } else {
    size_t width = 5;
    for (const auto& [label, r] : output) width = std::max(width, label.size());
    std::printf("%-*s  %s\n", static_cast<int>(width), "layer",
                "corr mean ± std / diag mean");
    for (const auto& [label, r] : output)
      std::printf("%-*s  %s\n", static_cast<int>(width), label.c_str(),
                  formatted_stats(r).c_str());
  }
  return 0;
}

// ---- plan ----

struct PlanArgs {
  std::string arch_file;
  uint32_t attribute = 0;
  uint32_t intrinsic = 30;
  uint32_t max_transition = 0;
  double least_ratio = 1.0;
  std::string pattern = "log";
  uint32_t trials = 10000;
  uint64_t seed = 0;
  std::string out_file;
  bool json = false;
};

int run_plan(const PlanArgs& args) {
  ArchHandle arch;
  korth_status status = korth_arch_load_file(args.arch_file.c_str(), &arch.ptr);
  if (status != KORTH_OK) return report_failure(status);

  korth_plan_params params;
  params.intrinsic_dim = args.intrinsic;
  params.attribute_dim = args.attribute;
  params.max_transition_dim = args.max_transition;
  params.least_ratio = args.least_ratio;
  params.pattern = ramp_from(args.pattern);
  params.trials = args.trials;
  params.seed = args.seed;

  PlanHandle plan;
  status = korth_plan_build(arch.ptr, &params, &plan.ptr);
  if (status != KORTH_OK) return report_failure(status);

  OwnedString text;
  status = korth_plan_to_json(plan.ptr, &text.ptr);
  if (status != KORTH_OK) return report_failure(status);

  if (!args.out_file.empty() && !write_file(args.out_file, text.ptr)) {
    std::fprintf(stderr, "error: cannot write %s\n", args.out_file.c_str());
    return 2;
  }

  if (args.json) {
    std::fputs(text.ptr, stdout);
  } else {
    std::printf("%-12s %-16s %10s %6s %10s %8s %7s\n", "layer", "determinacy",
                "structural", "freed", "expected", "ratio", "exempt");
    const size_t count = korth_plan_entry_count(plan.ptr);
    for (size_t i = 0; i < count; ++i) {
      korth_plan_entry entry;
      korth_plan_entry_at(plan.ptr, i, &entry);
      std::printf("%-12s %-16s %10" PRIu32 " %6" PRIu32 " %10.4f %8.4f %3" PRIu32
                  "+%" PRIu32 "\n",
                  entry.layer,
                  entry.over_determined ? "over-determined" : "less-determined",
                  entry.structural_dim, entry.freed_count,
                  entry.expected_relaxed_pairs, entry.ratio,
                  entry.exempt_positive, entry.exempt_negative);
    }
  }
  return 0;
}

// ---- loss / gradcheck ----

struct LossArgs {
  std::string tensor_file;
  std::string measure = "disentangled";
  double lambda = 0.1;
  int power_iterations = 2;
  uint64_t seed = 0;
  std::string mask_file;
  bool json = false;
  double step = 1e-5;       // gradcheck only
  double tolerance = 1e-4;  // gradcheck only
};

int load_loss_inputs(const LossArgs& args, TensorHandle& tensor,
                     PlanHandle& plan, korth_reg_spec& spec) {
  korth_status status =
      korth_tensor_load_file(args.tensor_file.c_str(), &tensor.ptr);
  if (status != KORTH_OK) return report_failure(status);
  if (!args.mask_file.empty()) {
    status = korth_plan_load_file(args.mask_file.c_str(), &plan.ptr);
    if (status != KORTH_OK) return report_failure(status);
  }
  spec.variant = variant_from(args.measure);
  spec.lambda_diag = args.lambda;
  spec.power_iterations = args.power_iterations;
  spec.seed = args.seed;
  return -1;  // no failure
}

int run_loss(const LossArgs& args) {
  TensorHandle tensor;
  PlanHandle plan;
  korth_reg_spec spec;
  if (int rc = load_loss_inputs(args, tensor, plan, spec); rc >= 0) return rc;

  korth_reg_result result;
  const korth_status status = korth_loss(tensor.ptr, &spec, plan.ptr, &result);
  if (status != KORTH_OK) return report_failure(status);

  if (args.json) {
    ordered_json doc;
    doc["measure"] = args.measure;
    doc["total"] = result.total;
    doc["corr_component"] = result.corr_component;
    doc["diag_component"] = result.diag_component;
    doc["degenerate"] = result.degenerate != 0;
    std::printf("%s\n", doc.dump(2).c_str());
  } else {
    std::printf("total: %.12g\n", result.total);
    if (spec.variant == KORTH_REG_DISENTANGLED ||
        spec.variant == KORTH_REG_RELAXED) {
      std::printf("corr component: %.12g\n", result.corr_component);
      std::printf("diag component: %.12g\n", result.diag_component);
    }
    if (result.degenerate) std::printf("degenerate input\n");
  }
  return 0;
}

int run_gradcheck(const LossArgs& args) {
  TensorHandle tensor;
  PlanHandle plan;
  korth_reg_spec spec;
  if (int rc = load_loss_inputs(args, tensor, plan, spec); rc >= 0) return rc;

  double relative_error = 0.0;
  const korth_status status = korth_gradient_check(
      tensor.ptr, &spec, plan.ptr, args.step, &relative_error);
  if (status != KORTH_OK) return report_failure(status);

  const bool pass = relative_error <= args.tolerance;
  if (args.json) {
    ordered_json doc;
    doc["measure"] = args.measure;
    doc["relative_error"] = relative_error;
    doc["tolerance"] = args.tolerance;
    doc["pass"] = pass;
    std::printf("%s\n", doc.dump(2).c_str());
  } else {
    std::printf("relative error: %.3e (tolerance %.3e) -> %s\n",
                relative_error, args.tolerance, pass ? "pass" : "FAIL");
  }
  return pass ? 0 : 3;
}

// ---- simulate ----

struct SimulateArgs {
  uint32_t freed = 0;
  uint32_t boxes = 0;
  uint32_t trials = 10000;
  uint64_t seed = 0;
  bool json = false;
};

int run_simulate(const SimulateArgs& args) {
  double expected = 0.0;
  double std_error = 0.0;
  korth_status status = korth_simulate(args.freed, args.boxes, args.trials,
                                       args.seed, &expected, &std_error);
  if (status != KORTH_OK) return report_failure(status);
  double closed = 0.0;
  status = korth_collision_closed_form(args.freed, args.boxes, &closed);
  if (status != KORTH_OK) return report_failure(status);

  if (args.json) {
    ordered_json doc;
    doc["freed"] = args.freed;
    doc["boxes"] = args.boxes;
    doc["trials"] = args.trials;
    doc["seed"] = args.seed;
    doc["expected_pairs"] = expected;
    doc["std_error"] = std_error;
    doc["closed_form"] = closed;
    std::printf("%s\n", doc.dump(2).c_str());
  } else {
    std::printf("expected pairs: %.6f\n", expected);
    std::printf("std error:      %.6f\n", std_error);
    std::printf("closed form:    %.6f\n", closed);
  }
  return 0;
}

// ---- verify ----

struct VerifyArgs {
  std::string tensor_file;
  double tolerance = 1e-10;
  bool json = false;
};

int run_verify(const VerifyArgs& args) {
  TensorHandle tensor;
  korth_status status =
      korth_tensor_load_file(args.tensor_file.c_str(), &tensor.ptr);
  if (status != KORTH_OK) return report_failure(status);

  double direct = 0.0;
  double decomposed = 0.0;
  status = korth_frobenius_decomposition(tensor.ptr, &direct, &decomposed);
  if (status != KORTH_OK) return report_failure(status);

  const double scale = std::max(std::max(std::fabs(direct),
                                         std::fabs(decomposed)), 1e-300);
  const double relative = std::fabs(direct - decomposed) / scale;
  const bool pass = relative <= args.tolerance;

  if (args.json) {
    ordered_json doc;
    doc["direct"] = direct;
    doc["decomposed"] = decomposed;
    doc["relative_difference"] = relative;
    doc["pass"] = pass;
    std::printf("%s\n", doc.dump(2).c_str());
  } else {
    std::printf("direct:       %.15g\n", direct);
    std::printf("decomposed:   %.15g\n", decomposed);
    std::printf("relative diff: %.3e -> %s\n", relative, pass ? "pass" : "FAIL");
  }
  return pass ? 0 : 3;
}

// ---- train / demo ----

struct TrainArgs {
  std::string config_file;
  std::string metrics_file = "metrics.jsonl";
  std::string summary_file = "summary.json";
};

std::string slurp_or_exit(const std::string& path, int* rc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "error: cannot open %s\n", path.c_str());
    *rc = 2;
    return {};
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  *rc = -1;
  return text;
}

int run_train(const TrainArgs& args) {
  int rc = 0;
  const std::string config = slurp_or_exit(args.config_file, &rc);
  if (rc >= 0) return rc;

  OwnedString metrics;
  OwnedString summary;
  const korth_status status =
      korth_train(config.c_str(), &metrics.ptr, &summary.ptr);
  if (status != KORTH_OK) return report_config_failure(status);

  if (!write_file(args.metrics_file, metrics.ptr)) {
    std::fprintf(stderr, "error: cannot write %s\n", args.metrics_file.c_str());
    return 2;
  }
  if (!write_file(args.summary_file, summary.ptr)) {
    std::fprintf(stderr, "error: cannot write %s\n", args.summary_file.c_str());
    return 2;
  }
  std::fputs(summary.ptr, stdout);
  return 0;
}

struct DemoArgs {
  std::string config_file;
  std::string out_file;
};

int run_demo(const DemoArgs& args) {
  int rc = 0;
  const std::string config = slurp_or_exit(args.config_file, &rc);
  if (rc >= 0) return rc;

  OwnedString report;
  const korth_status status = korth_demo_inaccessible(config.c_str(), &report.ptr);
  if (status != KORTH_OK) return report_config_failure(status);

  if (!args.out_file.empty() && !write_file(args.out_file, report.ptr)) {
    std::fprintf(stderr, "error: cannot write %s\n", args.out_file.c_str());
    return 2;
  }
  std::fputs(report.ptr, stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel orthogonality toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", korth_version());

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand(
      "report", "near-orthogonality statistics for kernel tensors");
  report->add_option("files", report_args.files, "KTNSR tensor files")
      ->required()
      ->expected(-1);
  report->add_flag("--group-by-shape", report_args.group_by_shape,
                   "aggregate layers sharing the same (o, d)");
  report->add_flag("--json", report_args.json, "machine-readable output");

  PlanArgs plan_args;
  CLI::App* plan =
      app.add_subcommand("plan", "build a per-layer relaxation plan");
  plan->add_option("arch", plan_args.arch_file, "architecture JSON file")
      ->required();
  plan->add_option("--attribute", plan_args.attribute,
                   "dataset attribute/class count")
      ->required();
  plan->add_option("--intrinsic", plan_args.intrinsic,
                   "dataset intrinsic dimension");
  plan->add_option("--max-transition", plan_args.max_transition,
                   "model transition cap")
      ->required();
  plan->add_option("--least-ratio", plan_args.least_ratio,
                   "first module's relaxation ratio");
  plan->add_option("--pattern", plan_args.pattern, "ratio ramp shape")
      ->check(CLI::IsMember({"linear", "log", "exp"}));
  plan->add_option("--trials", plan_args.trials, "Monte Carlo trials");
  plan->add_option("--seed", plan_args.seed, "Monte Carlo seed");
  plan->add_option("-o,--out", plan_args.out_file, "write plan JSON here");
  plan->add_flag("--json", plan_args.json, "print plan JSON to stdout");

  auto add_loss_options = [](CLI::App* cmd, LossArgs& args) {
    cmd->add_option("tensor", args.tensor_file, "KTNSR tensor file")
        ->required();
    cmd->add_option("--measure", args.measure, "regularizer variant")
        ->check(CLI::IsMember(
            {"frobenius", "scaled", "srip", "disentangled", "relaxed"}));
    cmd->add_option("--lambda", args.lambda, "diagonal term weight");
    cmd->add_option("--power-iterations", args.power_iterations,
                    "spectral estimate rounds");
    cmd->add_option("--seed", args.seed, "spectral start-vector seed");
    cmd->add_option("--mask", args.mask_file,
                    "plan JSON supplying exemption counts (relaxed only)");
    cmd->add_flag("--json", args.json, "machine-readable output");
  };

  LossArgs loss_args;
  CLI::App* loss =
      app.add_subcommand("loss", "evaluate a regularizer on a tensor");
  add_loss_options(loss, loss_args);

  LossArgs gradcheck_args;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "compare the analytic gradient with finite differences");
  add_loss_options(gradcheck, gradcheck_args);
  gradcheck->add_option("--step", gradcheck_args.step,
                        "finite-difference step");
  gradcheck->add_option("--tolerance", gradcheck_args.tolerance,
                        "maximum accepted relative error");

  SimulateArgs simulate_args;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Monte Carlo expected colliding pairs (items into boxes)");
  simulate->add_option("--freed", simulate_args.freed, "items to place")
      ->required();
  simulate->add_option("--boxes", simulate_args.boxes, "available boxes")
      ->required();
  simulate->add_option("--trials", simulate_args.trials, "trial count");
  simulate->add_option("--seed", simulate_args.seed, "trial seed");
  simulate->add_flag("--json", simulate_args.json, "machine-readable output");

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand(
      "verify", "check the residual-norm decomposition identity");
  verify->add_option("tensor", verify_args.tensor_file, "KTNSR tensor file")
      ->required();
  verify->add_option("--tolerance", verify_args.tolerance,
                     "maximum accepted relative difference");
  verify->add_flag("--json", verify_args.json, "machine-readable output");

  TrainArgs train_args;
  CLI::App* train =
      app.add_subcommand("train", "run the desk-scale trainer from a config");
  train->add_option("config", train_args.config_file, "train config JSON")
      ->required();
  train->add_option("--metrics", train_args.metrics_file,
                    "per-epoch metrics output (JSON lines)");
  train->add_option("--summary", train_args.summary_file,
                    "final summary output (JSON)");

  DemoArgs demo_args;
  CLI::App* demo = app.add_subcommand(
      "demo-inaccessible",
      "show the unreachable orthogonality floor of an over-determined layer");
  demo->add_option("config", demo_args.config_file, "demo config JSON")
      ->required();
  demo->add_option("-o,--out", demo_args.out_file, "write report JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage errors exit 1 regardless of the parser's own code
  }

  if (*report) return run_report(report_args);
  if (*plan) return run_plan(plan_args);
  if (*loss) return run_loss(loss_args);
  if (*gradcheck) return run_gradcheck(gradcheck_args);
  if (*simulate) return run_simulate(simulate_args);
  if (*verify) return run_verify(verify_args);
  if (*train) return run_train(train_args);
  if (*demo) return run_demo(demo_args);
  return 1;
}
