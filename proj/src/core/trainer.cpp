#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include <nlohmann/json.hpp>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace korth {

namespace {

// Independent RNG streams per concern so adding a consumer never shifts
// another's draws.
constexpr std::uint64_t kDatasetStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kInitStream = 3;

std::string layer_name(std::size_t index) {
  return "dense" + std::to_string(index);
}

std::vector<std::uint32_t> layer_dims(const TrainConfig& cfg) {
  std::vector<std::uint32_t> dims;
  dims.push_back(cfg.dataset.input_dim);
  for (std::uint32_t h : cfg.hidden_dims) dims.push_back(h);
  dims.push_back(cfg.dataset.classes);
  return dims;
}

bool uses_diag_balance(const RegularizerSpec& spec) {
  return spec.variant == RegVariant::Disentangled ||
         spec.variant == RegVariant::RelaxedDisentangled;
}

}  // namespace

Dataset make_synthetic_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2)
    fail(ErrorCode::InvalidArgument, "dataset needs at least two classes");
  if (spec.input_dim == 0)
    fail(ErrorCode::InvalidArgument, "input dimension must be positive");
  if (spec.samples_per_class == 0)
    fail(ErrorCode::InvalidArgument, "samples per class must be positive");
  if (!(std::isfinite(spec.separation) && spec.separation >= 0.0))
    fail(ErrorCode::InvalidArgument, "separation must be finite and non-negative");

  const std::uint32_t train_per_class =
      std::max<std::uint32_t>(1, 9 * spec.samples_per_class / 10);
  const std::uint32_t val_per_class = spec.samples_per_class - train_per_class;

  Dataset data;
  data.train_inputs.resize(
      static_cast<Eigen::Index>(spec.classes) * train_per_class,
      spec.input_dim);
  data.val_inputs.resize(static_cast<Eigen::Index>(spec.classes) * val_per_class,
                         spec.input_dim);
  data.train_labels.reserve(data.train_inputs.rows());
  data.val_labels.reserve(data.val_inputs.rows());

  rng::Engine eng(seed);
  Eigen::Index train_row = 0;
  Eigen::Index val_row = 0;
  Eigen::VectorXd mean(spec.input_dim);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < mean.size(); ++j) mean[j] = eng.normal();
      norm = mean.norm();
    } while (norm < kNormFloor);
    mean *= spec.separation / norm;

    for (std::uint32_t s = 0; s < spec.samples_per_class; ++s) {
      const bool to_train = s < train_per_class;
      Eigen::Index row = to_train ? train_row++ : val_row++;
      RowMatrix& target = to_train ? data.train_inputs : data.val_inputs;
      for (Eigen::Index j = 0; j < mean.size(); ++j)
        target(row, j) = mean[j] + eng.normal();
      (to_train ? data.train_labels : data.val_labels).push_back(c);
    }
  }
  return data;
}

const DenseLayer* ToyNetwork::find(const std::string& name) const {
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].weight.source == name) return &layers[l];
  return nullptr;
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs == 0) fail(ErrorCode::InvalidArgument, "epochs must be positive");
  if (cfg.batch_size == 0)
    fail(ErrorCode::InvalidArgument, "batch size must be positive");
  if (!(cfg.learning_rate > 0.0 && std::isfinite(cfg.learning_rate)))
    fail(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    fail(ErrorCode::InvalidArgument, "momentum must lie in [0, 1)");
  if (!(cfg.decay_factor > 0.0 && std::isfinite(cfg.decay_factor)))
    fail(ErrorCode::InvalidArgument, "decay factor must be positive");
  for (std::size_t i = 0; i < cfg.milestones.size(); ++i) {
    if (cfg.milestones[i] == 0 || cfg.milestones[i] >= cfg.epochs)
      fail(ErrorCode::InvalidArgument,
           "milestones must lie strictly inside the epoch range");
    if (i > 0 && cfg.milestones[i] <= cfg.milestones[i - 1])
      fail(ErrorCode::InvalidArgument, "milestones must be strictly increasing");
  }
  for (std::uint32_t h : cfg.hidden_dims)
    if (h == 0) fail(ErrorCode::InvalidArgument, "hidden widths must be positive");
  if (cfg.dataset.classes < 2)
    fail(ErrorCode::InvalidArgument, "dataset needs at least two classes");
  if (cfg.dataset.input_dim == 0)
    fail(ErrorCode::InvalidArgument, "input dimension must be positive");
  if (cfg.dataset.samples_per_class == 0)
    fail(ErrorCode::InvalidArgument, "samples per class must be positive");

  if (cfg.regularizer) {
    const RegularizerConfig& reg = *cfg.regularizer;
    if (!(reg.coefficient >= 0.0 && std::isfinite(reg.coefficient)))
      fail(ErrorCode::InvalidArgument,
           "regularizer coefficient must be finite and non-negative");
    if (reg.spec.lambda_diag < 0.0)
      fail(ErrorCode::InvalidArgument, "lambda_diag must be non-negative");
    if (reg.spec.power_iterations < 1)
      fail(ErrorCode::InvalidArgument, "power_iterations must be at least 1");
    if (reg.spec.exemption_mask)
      fail(ErrorCode::InvalidArgument,
           "masks are derived from the plan during training, not configured");

    const std::size_t layer_count = cfg.hidden_dims.size() + 1;
    if (reg.layer) {
      bool known = false;
      for (std::size_t l = 0; l < layer_count; ++l)
        known = known || *reg.layer == layer_name(l);
      if (!known)
        fail(ErrorCode::InvalidArgument,
             "regularized layer '" + *reg.layer + "' does not exist");
    }
    if (reg.spec.variant == RegVariant::RelaxedDisentangled) {
      if (!reg.plan)
        fail(ErrorCode::InvalidArgument,
             "relaxed disentangled training requires a relaxation plan");
      for (std::size_t l = 0; l < layer_count; ++l) {
        const std::string name = layer_name(l);
        if (reg.layer && *reg.layer != name) continue;
        if (!reg.plan->find(name))
          fail(ErrorCode::Validation,
               "relaxation plan has no entry for layer " + name);
      }
    }
  }
  if (cfg.balance) validate_balance_config(*cfg.balance);
}

namespace {

ToyNetwork init_network(const TrainConfig& cfg) {
  const std::vector<std::uint32_t> dims = layer_dims(cfg);
  ToyNetwork net;
  rng::Engine eng(rng::mix(cfg.seed, kInitStream));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    const auto o = static_cast<Eigen::Index>(dims[l + 1]);
    const auto d = static_cast<Eigen::Index>(dims[l]);
    layer.weight.values.resize(o, d);
    layer.weight.source = layer_name(l);
    // variance 1/d keeps expected squared filter norms at 1
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index r = 0; r < o; ++r)
      for (Eigen::Index c = 0; c < d; ++c)
        layer.weight.values(r, c) = scale * eng.normal();
    layer.bias = Eigen::VectorXd::Zero(o);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

double learning_rate_for(const TrainConfig& cfg, std::uint32_t epoch) {
  double lr = cfg.learning_rate;
  for (std::uint32_t m : cfg.milestones)
    if (epoch > m) lr *= cfg.decay_factor;
  return lr;
}

struct ForwardCache {
  std::vector<RowMatrix> activations;  // activations[0] is the input batch
  std::vector<RowMatrix> pre;          // pre-activation per layer
  RowMatrix probs;
};

double forward_pass(const ToyNetwork& net, const RowMatrix& inputs,
                    const std::vector<std::uint32_t>& labels,
                    ForwardCache* cache) {
  const std::size_t layer_count = net.layers.size();
  RowMatrix act = inputs;
  if (cache) {
    cache->activations.assign(1, act);
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < layer_count; ++l) {
    const DenseLayer& layer = net.layers[l];
    RowMatrix z = act * layer.weight.values.transpose();
    z.rowwise() += layer.bias.transpose();
    if (cache) cache->pre.push_back(z);
    if (l + 1 < layer_count) {
      act = z.cwiseMax(0.0);
      if (cache) cache->activations.push_back(act);
    } else {
      act = std::move(z);
    }
  }

  // row-wise softmax with max subtraction
  RowMatrix probs = act;
  double loss = 0.0;
  const auto batch = static_cast<std::size_t>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double peak = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - peak).exp();
    probs.row(i) /= probs.row(i).sum();
    const double p = std::max(
        probs(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])),
        1e-300);
    loss -= std::log(p);
  }
  loss /= static_cast<double>(batch);
  if (cache) cache->probs = std::move(probs);
  return loss;
}

struct LayerGrad {
  RowMatrix weight;
  Eigen::VectorXd bias;
};

std::vector<LayerGrad> backward_pass(const ToyNetwork& net,
                                     const ForwardCache& cache,
                                     const std::vector<std::uint32_t>& labels) {
  const std::size_t layer_count = net.layers.size();
  std::vector<LayerGrad> grads(layer_count);

  RowMatrix delta = cache.probs;
  for (Eigen::Index i = 0; i < delta.rows(); ++i)
    delta(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -=
        1.0;
  delta /= static_cast<double>(delta.rows());

  for (std::size_t l = layer_count; l-- > 0;) {
    grads[l].weight = delta.transpose() * cache.activations[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      RowMatrix upstream = delta * net.layers[l].weight.values;
      delta = upstream.cwiseProduct(
          (cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return grads;
}

double accuracy(const ToyNetwork& net, const RowMatrix& inputs,
                const std::vector<std::uint32_t>& labels) {
  if (inputs.rows() == 0) return 0.0;
  RowMatrix act = inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    RowMatrix z = act * net.layers[l].weight.values.transpose();
    z.rowwise() += net.layers[l].bias.transpose();
    act = l + 1 < net.layers.size() ? z.cwiseMax(0.0) : std::move(z);
  }
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < act.rows(); ++i) {
    Eigen::Index best = 0;
    act.row(i).maxCoeff(&best);
    if (static_cast<std::uint32_t>(best) == labels[static_cast<std::size_t>(i)])
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(act.rows());
}

// Exemption mask for one layer, rebuilt from the current weights. Falls back
// to an empty mask when a filter has collapsed; the gradient path then
// reports the degeneracy itself.
PairMask mask_for_layer(const KernelMatrix& weight, const PlanEntry& entry) {
  PairMask empty;
  empty.order = static_cast<std::uint32_t>(weight.rows());
  for (Eigen::Index r = 0; r < weight.rows(); ++r)
    if (weight.values.row(r).norm() < kNormFloor) return empty;
  const CorrelationLowerTriangle tril = correlation_tril(weight);
  return build_exemption_mask(tril, entry.counts);
}

struct RegTotals {
  double raw = 0.0;
  double corr = 0.0;
  double diag = 0.0;
};

bool layer_is_regularized(const RegularizerConfig& reg, const std::string& name) {
  return !reg.layer || *reg.layer == name;
}

// Evaluates the regularizer over every targeted layer, adds the weighted
// gradient into `grads` when it is non-null and the coefficient is nonzero.
RegTotals apply_regularizer(const ToyNetwork& net, const RegularizerConfig& reg,
                            double coefficient, double lambda,
                            std::vector<LayerGrad>* grads) {
  RegTotals totals;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const KernelMatrix& weight = net.layers[l].weight;
    if (!layer_is_regularized(reg, weight.source)) continue;

    RegularizerSpec spec = reg.spec;
    spec.lambda_diag = lambda;
    if (spec.variant == RegVariant::RelaxedDisentangled) {
      const PlanEntry* entry = reg.plan->find(weight.source);
      spec.exemption_mask = mask_for_layer(weight, *entry);
    }
    const RegularizerResult res = regularizer_gradient(weight, spec);
    totals.raw += res.total;
    totals.corr += res.corr_component;
    totals.diag += res.diag_component;
    if (grads && coefficient != 0.0 && res.gradient)
      grads->at(l).weight += coefficient * *res.gradient;
  }
  return totals;
}

double share_of(double task, double weighted) {
  return weighted > 0.0 ? weighted / (task + weighted) : 0.0;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  validate_train_config(cfg);
  const Dataset data =
      make_synthetic_dataset(cfg.dataset, rng::mix(cfg.seed, kDatasetStream));
  TrainResult result;
  result.network = init_network(cfg);
  ToyNetwork& net = result.network;

  const bool has_reg = cfg.regularizer.has_value();
  double c_reg = has_reg ? cfg.regularizer->coefficient : 0.0;
  double lambda = has_reg ? cfg.regularizer->spec.lambda_diag : 0.0;
  result.coefficients.c_reg = c_reg;
  result.coefficients.lambda_diag = lambda;

  std::vector<std::uint32_t> adjust_at;
  if (cfg.balance)
    adjust_at = adjustment_epochs(cfg.milestones, cfg.epochs);

  std::vector<LayerGrad> velocity(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    velocity[l].weight = RowMatrix::Zero(net.layers[l].weight.rows(),
                                         net.layers[l].weight.cols());
    velocity[l].bias = Eigen::VectorXd::Zero(net.layers[l].bias.size());
  }

  const auto sample_count = static_cast<std::size_t>(data.train_inputs.rows());
  std::vector<std::uint32_t> order(sample_count);
  RowMatrix batch_inputs;
  std::vector<std::uint32_t> batch_labels;

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate_for(cfg, epoch);

    for (std::size_t i = 0; i < sample_count; ++i)
      order[i] = static_cast<std::uint32_t>(i);
    rng::Engine shuffle(rng::mix(rng::mix(cfg.seed, kShuffleStream), epoch));
    for (std::size_t i = sample_count; i-- > 1;)
      std::swap(order[i], order[shuffle.below(i + 1)]);

    double task_sum = 0.0;
    RegTotals reg_sum;
    std::size_t batch_count = 0;

    for (std::size_t start = 0; start < sample_count;
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(sample_count, start + cfg.batch_size);
      const auto rows = static_cast<Eigen::Index>(stop - start);
      batch_inputs.resize(rows, data.train_inputs.cols());
      batch_labels.resize(static_cast<std::size_t>(rows));
      for (std::size_t i = start; i < stop; ++i) {
        batch_inputs.row(static_cast<Eigen::Index>(i - start)) =
            data.train_inputs.row(order[i]);
        batch_labels[i - start] = data.train_labels[order[i]];
      }

      ForwardCache cache;
      const double task_loss =
          forward_pass(net, batch_inputs, batch_labels, &cache);
      std::vector<LayerGrad> grads = backward_pass(net, cache, batch_labels);

      RegTotals reg;
      if (has_reg)
        reg = apply_regularizer(net, *cfg.regularizer, c_reg, lambda, &grads);

      if (!std::isfinite(task_loss) || !std::isfinite(reg.raw)) {
        fail(ErrorCode::Numeric,
             "loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                 std::to_string(batch_count + 1));
      }

      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        velocity[l].weight = cfg.momentum * velocity[l].weight + grads[l].weight;
        net.layers[l].weight.values -=
            lr * (grads[l].weight + cfg.momentum * velocity[l].weight);
        velocity[l].bias = cfg.momentum * velocity[l].bias + grads[l].bias;
        net.layers[l].bias -=
            lr * (grads[l].bias + cfg.momentum * velocity[l].bias);
      }

      task_sum += task_loss * static_cast<double>(rows);
      reg_sum.raw += reg.raw;
      reg_sum.corr += reg.corr;
      reg_sum.diag += reg.diag;
      ++batch_count;
    }

    const double task_avg = task_sum / static_cast<double>(sample_count);
    const double raw_avg = reg_sum.raw / static_cast<double>(batch_count);
    const double corr_avg = reg_sum.corr / static_cast<double>(batch_count);
    const double diag_avg = reg_sum.diag / static_cast<double>(batch_count);
    const bool diag_balanced =
        has_reg && uses_diag_balance(cfg.regularizer->spec);

    // the unweighted regularizer at the current lambda
    auto raw_with_lambda = [&]() {
      return diag_balanced ? corr_avg + lambda * diag_avg : raw_avg;
    };

    if (cfg.balance && has_reg && epoch == cfg.balance->calibration_epoch) {
      if (diag_balanced) {
        if (auto next = calibrate_lambda(corr_avg, diag_avg,
                                         cfg.balance->target_diag_share)) {
          CoefficientAction action;
          action.epoch = epoch;
          action.action = "calibrate";
          action.coefficient = "lambda_diag";
          action.old_value = lambda;
          action.new_value = *next;
          const double before = lambda * diag_avg;
          const double after = *next * diag_avg;
          action.share_before = share_of(corr_avg, before);
          action.share_after = share_of(corr_avg, after);
          lambda = *next;
          result.coefficients.record(std::move(action));
        }
      }
      const double raw_now = raw_with_lambda();
      if (auto next = calibrate_reg_coefficient(task_avg, raw_now,
                                                cfg.balance->target_reg_share)) {
        CoefficientAction action;
        action.epoch = epoch;
        action.action = "calibrate";
        action.coefficient = "c_reg";
        action.old_value = c_reg;
        action.new_value = *next;
        action.share_before = share_of(task_avg, c_reg * raw_avg);
        action.share_after = share_of(task_avg, *next * raw_now);
        c_reg = *next;
        result.coefficients.record(std::move(action));
      }
    }

    if (cfg.balance && has_reg &&
        std::find(adjust_at.begin(), adjust_at.end(), epoch) !=
            adjust_at.end()) {
      const double raw_now = raw_with_lambda();
      const double capped = enforce_cap(task_avg, c_reg, raw_now, *cfg.balance);
      if (capped != c_reg) {
        CoefficientAction action;
        action.epoch = epoch;
        action.action = "cap";
        action.coefficient = "c_reg";
        action.old_value = c_reg;
        action.new_value = capped;
        action.share_before = share_of(task_avg, c_reg * raw_now);
        action.share_after = share_of(task_avg, capped * raw_now);
        c_reg = capped;
        result.coefficients.record(std::move(action));
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.task_loss = task_avg;
    record.reg_raw = raw_avg;
    record.reg_corr = corr_avg;
    record.reg_diag = diag_avg;
    record.c_reg = c_reg;
    record.lambda_diag = lambda;
    record.share = share_of(task_avg, c_reg * raw_with_lambda());
    record.val_accuracy = accuracy(net, data.val_inputs, data.val_labels);
    for (const DenseLayer& layer : net.layers)
      record.layer_reports.push_back(
          near_orth_report(layer.weight, layer.weight.source));
    result.history.push_back(std::move(record));
  }
  return result;
}

namespace {

nlohmann::ordered_json report_json(const NearOrthReport& report) {
  nlohmann::ordered_json j;
  j["layer"] = report.layer_name;
  j["tril_mean"] = report.tril_mean;
  j["tril_std"] = report.tril_std;
  j["diag_mean"] = report.diag_mean;
  return j;
}

nlohmann::ordered_json record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.learning_rate;
  j["task_loss"] = r.task_loss;
  j["reg_raw"] = r.reg_raw;
  j["reg_corr"] = r.reg_corr;
  j["reg_diag"] = r.reg_diag;
  j["share"] = r.share;
  j["c_reg"] = r.c_reg;
  j["lambda_diag"] = r.lambda_diag;
  j["val_accuracy"] = r.val_accuracy;
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const NearOrthReport& report : r.layer_reports)
    layers.push_back(report_json(report));
  j["layers"] = std::move(layers);
  return j;
}

nlohmann::ordered_json action_json(const CoefficientAction& a) {
  nlohmann::ordered_json j;
  j["epoch"] = a.epoch;
  j["action"] = a.action;
  j["coefficient"] = a.coefficient;
  j["old"] = a.old_value;
  j["new"] = a.new_value;
  j["share_before"] = a.share_before;
  j["share_after"] = a.share_after;
  return j;
}

}  // namespace

std::string metrics_to_jsonl(const TrainResult& result) {
  std::string out;
  for (const EpochRecord& r : result.history) {
    out += record_json(r).dump();
    out += '\n';
  }
  return out;
}

std::string summary_to_json(const TrainConfig& cfg, const TrainResult& result) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["regularizer"] =
      cfg.regularizer ? reg_variant_name(cfg.regularizer->spec.variant) : "none";
  if (!result.history.empty()) j["final"] = record_json(result.history.back());
  nlohmann::ordered_json actions = nlohmann::ordered_json::array();
  for (const CoefficientAction& a : result.coefficients.history)
    actions.push_back(action_json(a));
  j["actions"] = std::move(actions);
  return j.dump(2) + "\n";
}

TrainConfig parse_train_config(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid train config: ") + err.what());
  }
  if (!doc.is_object())
    fail(ErrorCode::Parse, "train config must be a JSON object");

  TrainConfig cfg;
  try {
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.epochs = doc.value("epochs", cfg.epochs);
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
    cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
    cfg.decay_factor = doc.value("decay_factor", cfg.decay_factor);
    cfg.momentum = doc.value("momentum", cfg.momentum);
    if (doc.contains("milestones"))
      cfg.milestones = doc.at("milestones").get<std::vector<std::uint32_t>>();
    if (doc.contains("hidden_dims"))
      cfg.hidden_dims = doc.at("hidden_dims").get<std::vector<std::uint32_t>>();

    if (doc.contains("dataset")) {
      const auto& d = doc.at("dataset");
      cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
      cfg.dataset.input_dim = d.value("input_dim", cfg.dataset.input_dim);
      cfg.dataset.samples_per_class =
          d.value("samples_per_class", cfg.dataset.samples_per_class);
      cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
    }

    if (doc.contains("regularizer") && !doc.at("regularizer").is_null()) {
      const auto& r = doc.at("regularizer");
      RegularizerConfig reg;
      reg.spec.variant =
          reg_variant_from_name(r.value("variant", std::string("disentangled")));
      reg.spec.lambda_diag = r.value("lambda", reg.spec.lambda_diag);
      reg.spec.power_iterations =
          r.value("power_iterations", reg.spec.power_iterations);
      reg.spec.seed = r.value("seed", reg.spec.seed);
      reg.coefficient = r.value("coefficient", reg.coefficient);
      if (r.contains("layer")) reg.layer = r.at("layer").get<std::string>();
      if (r.contains("plan_file"))
        reg.plan = plan_from_file(r.at("plan_file").get<std::string>());
      else if (r.contains("plan"))
        reg.plan = plan_from_json(r.at("plan").dump());
      cfg.regularizer = std::move(reg);
    }

    if (doc.contains("balance") && !doc.at("balance").is_null()) {
      const auto& b = doc.at("balance");
      BalanceConfig bal;
      bal.target_reg_share = b.value("target_reg_share", bal.target_reg_share);
      bal.eps_reg = b.value("eps_reg", bal.eps_reg);
      bal.target_diag_share = b.value("target_diag_share", bal.target_diag_share);
      bal.eps_diag = b.value("eps_diag", bal.eps_diag);
      bal.cap_share = b.value("cap_share", bal.cap_share);
      bal.cap_target = b.value("cap_target", bal.cap_target);
      bal.calibration_epoch = b.value("calibration_epoch", bal.calibration_epoch);
      cfg.balance = bal;
    }
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid train config: ") + err.what());
  }
  validate_train_config(cfg);
  return cfg;
}

GradCheckReport objective_gradient_check(const TrainConfig& cfg, double step) {
  validate_train_config(cfg);
  if (!(step > 0.0))
    fail(ErrorCode::InvalidArgument, "finite-difference step must be positive");

  const Dataset data =
      make_synthetic_dataset(cfg.dataset, rng::mix(cfg.seed, kDatasetStream));
  ToyNetwork net = init_network(cfg);

  const auto batch =
      std::min<Eigen::Index>(cfg.batch_size, data.train_inputs.rows());
  const RowMatrix inputs = data.train_inputs.topRows(batch);
  const std::vector<std::uint32_t> labels(
      data.train_labels.begin(), data.train_labels.begin() + batch);

  const bool has_reg = cfg.regularizer.has_value();
  const double c = has_reg ? cfg.regularizer->coefficient : 0.0;
  const double lambda = has_reg ? cfg.regularizer->spec.lambda_diag : 0.0;

  // masks fixed at the evaluation point; the finite-difference probes must
  // see the same objective the analytic gradient differentiates
  std::vector<std::optional<PairMask>> masks(net.layers.size());
  if (has_reg &&
      cfg.regularizer->spec.variant == RegVariant::RelaxedDisentangled) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const KernelMatrix& weight = net.layers[l].weight;
      if (!layer_is_regularized(*cfg.regularizer, weight.source)) continue;
      masks[l] =
          mask_for_layer(weight, *cfg.regularizer->plan->find(weight.source));
    }
  }

  auto objective = [&](const ToyNetwork& candidate) {
    double value = forward_pass(candidate, inputs, labels, nullptr);
    if (!has_reg || c == 0.0) return value;
    for (std::size_t l = 0; l < candidate.layers.size(); ++l) {
      const KernelMatrix& weight = candidate.layers[l].weight;
      if (!layer_is_regularized(*cfg.regularizer, weight.source)) continue;
      RegularizerSpec spec = cfg.regularizer->spec;
      spec.lambda_diag = lambda;
      if (masks[l]) spec.exemption_mask = masks[l];
      value += c * evaluate_regularizer(weight, spec).total;
    }
    return value;
  };

  ForwardCache cache;
  forward_pass(net, inputs, labels, &cache);
  std::vector<LayerGrad> grads = backward_pass(net, cache, labels);
  if (has_reg && c != 0.0) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const KernelMatrix& weight = net.layers[l].weight;
      if (!layer_is_regularized(*cfg.regularizer, weight.source)) continue;
      RegularizerSpec spec = cfg.regularizer->spec;
      spec.lambda_diag = lambda;
      if (masks[l]) spec.exemption_mask = masks[l];
      const RegularizerResult res = regularizer_gradient(weight, spec);
      if (res.gradient) grads[l].weight += c * *res.gradient;
    }
  }

  std::vector<std::pair<double*, std::size_t>> blocks;
  std::vector<const double*> grad_blocks;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    blocks.emplace_back(net.layers[l].weight.values.data(),
                        static_cast<std::size_t>(
                            net.layers[l].weight.values.size()));
    grad_blocks.push_back(grads[l].weight.data());
    blocks.emplace_back(net.layers[l].bias.data(),
                        static_cast<std::size_t>(net.layers[l].bias.size()));
    grad_blocks.push_back(grads[l].bias.data());
  }

  double diff_sq = 0.0;
  double fd_sq = 0.0;
  double analytic_sq = 0.0;
  std::size_t params = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    double* base = blocks[b].first;
    const double* analytic = grad_blocks[b];
    for (std::size_t i = 0; i < blocks[b].second; ++i, ++params) {
      const double saved = base[i];
      base[i] = saved + step;
      const double plus = objective(net);
      base[i] = saved - step;
      const double minus = objective(net);
      base[i] = saved;
      const double fd = (plus - minus) / (2.0 * step);
      const double delta = analytic[i] - fd;
      diff_sq += delta * delta;
      fd_sq += fd * fd;
      analytic_sq += analytic[i] * analytic[i];
    }
  }

  GradCheckReport report;
  report.parameter_count = params;
  report.fd_norm = std::sqrt(fd_sq);
  report.analytic_norm = std::sqrt(analytic_sq);
  report.relative_error =
      std::sqrt(diff_sq) / std::max(report.fd_norm, 1e-12);
  return report;
}

DemoConfig parse_demo_config(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid demo config: ") + err.what());
  }
  if (!doc.is_object())
    fail(ErrorCode::Parse, "demo config must be a JSON object");
  DemoConfig cfg;
  try {
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.epochs = doc.value("epochs", cfg.epochs);
    cfg.batch_size = doc.value("batch_size", cfg.batch_size);
    cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
    if (doc.contains("coefficients"))
      cfg.coefficients = doc.at("coefficients").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& err) {
    fail(ErrorCode::Parse, std::string("invalid demo config: ") + err.what());
  }
  return cfg;
}

std::string demo_report_to_json(const DemoReport& report) {
  nlohmann::ordered_json j;
  j["out_channels"] = report.out_channels;
  j["background_dim"] = report.background_dim;
  j["floor"] = report.floor;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const DemoRow& row : report.rows) {
    nlohmann::ordered_json r;
    r["coefficient"] = row.coefficient;
    r["residual"] = row.residual;
    r["val_accuracy"] = row.val_accuracy;
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  j["strict_corr"] = report.strict_corr;
  j["relaxed_corr"] = report.relaxed_corr;
  j["relaxed_below_strict"] = report.relaxed_corr < report.strict_corr;
  return j.dump(2) + "\n";
}

DemoReport inaccessible_orthogonality_demo(const DemoConfig& cfg) {
  if (cfg.epochs == 0) fail(ErrorCode::InvalidArgument, "epochs must be positive");
  if (cfg.coefficients.empty())
    fail(ErrorCode::InvalidArgument, "coefficient sweep must be non-empty");

  TrainConfig base;
  base.epochs = cfg.epochs;
  base.batch_size = cfg.batch_size;
  base.learning_rate = cfg.learning_rate;
  base.decay_factor = 0.1;
  base.momentum = 0.9;
  base.seed = cfg.seed;
  base.hidden_dims = {16};
  base.dataset.classes = 4;
  base.dataset.input_dim = 8;
  base.dataset.samples_per_class = 128;
  base.dataset.separation = 10.0;
  const std::uint32_t m1 = 3 * cfg.epochs / 5;
  const std::uint32_t m2 = 4 * cfg.epochs / 5;
  if (m1 > 0 && m1 < cfg.epochs) base.milestones.push_back(m1);
  if (m2 > m1 && m2 < cfg.epochs) base.milestones.push_back(m2);

  DemoReport report;
  report.out_channels = 16;
  report.background_dim = 8;
  report.floor = std::sqrt(8.0);

  for (double coefficient : cfg.coefficients) {
    TrainConfig run = base;
    RegularizerConfig reg;
    reg.spec.variant = RegVariant::Frobenius;
    reg.coefficient = coefficient;
    reg.layer = "dense0";
    run.regularizer = std::move(reg);

    const TrainResult result = train(run);
    DemoRow row;
    row.coefficient = coefficient;
    row.residual = frobenius_loss(result.network.layers[0].weight).total;
    row.val_accuracy = result.history.back().val_accuracy;
    if (row.residual < report.floor - 1e-6) {
      fail(ErrorCode::Numeric,
           "residual dropped below the structural floor; the rank bound "
           "forbids this");
    }
    report.rows.push_back(row);
  }

  // strict vs relaxed disentangled on the same over-determined layer
  TrainConfig strict_run = base;
  {
    RegularizerConfig reg;
    reg.spec.variant = RegVariant::Disentangled;
    reg.spec.lambda_diag = 0.1;
    reg.coefficient = 1.0;
    reg.layer = "dense0";
    strict_run.regularizer = std::move(reg);
  }
  const TrainResult strict_result = train(strict_run);
  {
    RegularizerSpec spec;
    spec.variant = RegVariant::Disentangled;
    spec.lambda_diag = 0.1;
    report.strict_corr =
        disentangled_loss(strict_result.network.layers[0].weight, spec)
            .corr_component;
  }

  LayerDescriptor target;
  target.name = "dense0";
  target.out_channels = 16;
  target.in_channels = 8;
  target.kernel_h = 1;
  target.kernel_w = 1;
  target.group = "demo";
  target.module_index = 0;
  target.kind = LayerKind::Conv;
  PlanParams plan_params;
  plan_params.attribute_dim = 4;
  plan_params.intrinsic_dim = 30;
  plan_params.max_transition_dim = 8;
  plan_params.least_ratio = 1.0;
  plan_params.pattern = RampPattern::Log;
  plan_params.trials = 10000;
  plan_params.seed = cfg.seed;
  const RelaxationPlan plan = build_plan({target}, plan_params);

  TrainConfig relaxed_run = base;
  {
    RegularizerConfig reg;
    reg.spec.variant = RegVariant::RelaxedDisentangled;
    reg.spec.lambda_diag = 0.1;
    reg.coefficient = 1.0;
    reg.layer = "dense0";
    reg.plan = plan;
    relaxed_run.regularizer = std::move(reg);
  }
  const TrainResult relaxed_result = train(relaxed_run);
  {
    const KernelMatrix& weight = relaxed_result.network.layers[0].weight;
    RegularizerSpec spec;
    spec.variant = RegVariant::RelaxedDisentangled;
    spec.lambda_diag = 0.1;
    spec.exemption_mask = mask_for_layer(weight, *plan.find("dense0"));
    report.relaxed_corr = disentangled_loss(weight, spec).corr_component;
  }
  return report;
}

}  // namespace korth
