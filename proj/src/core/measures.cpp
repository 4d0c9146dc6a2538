#include "core/measures.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace korth {

namespace {

void check_finite(const KernelMatrix& k) {
  if (!k.values.allFinite())
    fail(ErrorCode::Validation, "kernel matrix contains non-finite values");
}

// Row norms with the degenerate-filter check.
Eigen::VectorXd row_norms_checked(const KernelMatrix& k) {
  Eigen::VectorXd norms = k.values.rowwise().norm();
  for (Eigen::Index j = 0; j < norms.size(); ++j)
    if (norms[j] < kNormFloor)
      fail(ErrorCode::Degenerate,
           "degenerate filter: row " + std::to_string(j) +
               " has norm below " + std::to_string(kNormFloor));
  return norms;
}

Eigen::MatrixXd residual(const KernelMatrix& k) {
  GramMatrix g = gram(k);
  g.values.diagonal().array() -= 1.0;
  return std::move(g.values);
}

RowMatrix zero_like(const KernelMatrix& k) {
  return RowMatrix::Zero(k.rows(), k.cols());
}

struct DisentangledParts {
  double corr = 0.0;
  double diag = 0.0;
  CorrelationLowerTriangle tril;
  std::vector<double> diag_vec;
};

DisentangledParts disentangled_parts(const KernelMatrix& k,
                                     const PairMask* mask) {
  DisentangledParts parts;
  parts.tril = correlation_tril(k);
  parts.diag_vec = diagonal_vector(k);
  double corr_sq = 0.0;
  for (std::size_t p = 0; p < parts.tril.entries.size(); ++p) {
    if (mask && mask->exempts(static_cast<std::uint32_t>(p))) continue;
    corr_sq += parts.tril.entries[p] * parts.tril.entries[p];
  }
  parts.corr = std::sqrt(corr_sq);
  double diag_sq = 0.0;
  for (double g : parts.diag_vec) diag_sq += (g - 1.0) * (g - 1.0);
  parts.diag = std::sqrt(diag_sq);
  return parts;
}

const PairMask* mask_for(const KernelMatrix& k, const RegularizerSpec& spec) {
  if (spec.variant == RegVariant::RelaxedDisentangled) {
    if (!spec.exemption_mask)
      fail(ErrorCode::InvalidArgument,
           "relaxed disentangled variant requires an exemption mask");
    const PairMask& m = *spec.exemption_mask;
    if (m.order != static_cast<std::uint32_t>(k.rows()))
      fail(ErrorCode::InvalidArgument,
           "exemption mask order does not match kernel rows");
    std::size_t pairs = CorrelationLowerTriangle::pair_count(m.order);
    for (std::uint32_t idx : m.exempt)
      if (idx >= pairs)
        fail(ErrorCode::InvalidArgument, "exemption mask index out of range");
    return &m;
  }
  if (spec.exemption_mask)
    fail(ErrorCode::InvalidArgument,
         "exemption mask is only valid for the relaxed disentangled variant");
  return nullptr;
}

struct SripForward {
  Eigen::VectorXd v0;
  std::vector<Eigen::VectorXd> u;  // u[r], r = 0..rounds-1
  std::vector<Eigen::VectorXd> v;  // v[r]
  double u_norm = 0.0;
  double v_norm = 0.0;
  bool degenerate = false;
  double total = 0.0;
};

// One attempt of the unrolled two-step iteration from a given start vector.
SripForward srip_forward(const Eigen::MatrixXd& a, Eigen::VectorXd v0,
                         int rounds) {
  SripForward f;
  f.v0 = std::move(v0);
  Eigen::VectorXd cur = f.v0;
  for (int r = 0; r < rounds; ++r) {
    Eigen::VectorXd u = a * cur;
    Eigen::VectorXd v = a * u;
    f.u.push_back(u);
    f.v.push_back(v);
    cur = v;
  }
  f.u_norm = f.u.back().norm();
  f.v_norm = f.v.back().norm();
  if (f.u_norm < kNormFloor) {
    f.degenerate = true;
    return f;
  }
  f.total = f.v_norm / f.u_norm;
  return f;
}

Eigen::VectorXd draw_unit_vector(rng::Engine& eng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  while (true) {
    for (Eigen::Index j = 0; j < n; ++j) v[j] = eng.normal();
    double norm = v.norm();
    if (norm >= kNormFloor) return v / norm;
  }
}

SripForward srip_run(const KernelMatrix& k, const RegularizerSpec& spec,
                     Eigen::MatrixXd* a_out) {
  if (spec.power_iterations < 1)
    fail(ErrorCode::InvalidArgument, "power_iterations must be at least 1");
  check_finite(k);
  Eigen::MatrixXd a = residual(k);
  rng::Engine eng(spec.seed);
  SripForward f =
      srip_forward(a, draw_unit_vector(eng, a.rows()), spec.power_iterations);
  if (f.degenerate) {
    // one redraw from the continued generator state, then give up (A ~ 0)
    f = srip_forward(a, draw_unit_vector(eng, a.rows()),
                     spec.power_iterations);
  }
  if (a_out) *a_out = std::move(a);
  return f;
}

}  // namespace

GramMatrix gram(const KernelMatrix& k) {
  check_finite(k);
  Eigen::Index o = k.rows();
  GramMatrix g;
  g.values.resize(o, o);
  for (Eigen::Index r = 0; r < o; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) {
      double dot = k.values.row(r).dot(k.values.row(c));
      g.values(r, c) = dot;
      g.values(c, r) = dot;
    }
  }
  return g;
}

std::pair<std::uint32_t, std::uint32_t> CorrelationLowerTriangle::pair_at(
    std::size_t index) {
  // invert index = r*(r-1)/2 + c with 0 <= c < r
  auto r = static_cast<std::uint32_t>(
      (1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(index))) / 2.0);
  while (static_cast<std::size_t>(r) * (r - 1) / 2 > index) --r;
  while (static_cast<std::size_t>(r + 1) * r / 2 <= index) ++r;
  auto c = static_cast<std::uint32_t>(
      index - static_cast<std::size_t>(r) * (r - 1) / 2);
  return {r, c};
}

CorrelationLowerTriangle correlation_tril(const KernelMatrix& k) {
  check_finite(k);
  Eigen::VectorXd norms = row_norms_checked(k);
  Eigen::MatrixXd normalized = k.values.array().colwise() / norms.array();
  auto o = static_cast<std::uint32_t>(k.rows());
  CorrelationLowerTriangle tril;
  tril.order = o;
  tril.entries.reserve(CorrelationLowerTriangle::pair_count(o));
  for (std::uint32_t r = 1; r < o; ++r)
    for (std::uint32_t c = 0; c < r; ++c)
      tril.entries.push_back(normalized.row(r).dot(normalized.row(c)));
  return tril;
}

std::vector<double> diagonal_vector(const KernelMatrix& k) {
  check_finite(k);
  std::vector<double> diag(static_cast<std::size_t>(k.rows()));
  for (Eigen::Index j = 0; j < k.rows(); ++j)
    diag[static_cast<std::size_t>(j)] = k.values.row(j).squaredNorm();
  return diag;
}

const char* reg_variant_name(RegVariant v) {
  switch (v) {
    case RegVariant::Frobenius: return "frobenius";
    case RegVariant::ScaledFrobenius: return "scaled";
    case RegVariant::Srip: return "srip";
    case RegVariant::Disentangled: return "disentangled";
    case RegVariant::RelaxedDisentangled: return "relaxed";
  }
  return "disentangled";
}

RegVariant reg_variant_from_name(const std::string& name) {
  if (name == "frobenius") return RegVariant::Frobenius;
  if (name == "scaled" || name == "scaled-frobenius")
    return RegVariant::ScaledFrobenius;
  if (name == "srip") return RegVariant::Srip;
  if (name == "disentangled") return RegVariant::Disentangled;
  if (name == "relaxed") return RegVariant::RelaxedDisentangled;
  fail(ErrorCode::InvalidArgument, "unknown regularizer variant '" + name +
                                       "'");
}

bool PairMask::exempts(std::uint32_t pair) const {
  return std::binary_search(exempt.begin(), exempt.end(), pair);
}

RegularizerResult frobenius_loss(const KernelMatrix& k) {
  check_finite(k);
  RegularizerResult res;
  res.total = residual(k).norm();
  return res;
}

RegularizerResult scaled_frobenius_loss(const KernelMatrix& k) {
  RegularizerResult res = frobenius_loss(k);
  res.total /= std::sqrt(static_cast<double>(k.rows()));
  return res;
}

RegularizerResult srip_loss(const KernelMatrix& k,
                            const RegularizerSpec& spec) {
  SripForward f = srip_run(k, spec, nullptr);
  RegularizerResult res;
  res.total = f.degenerate ? 0.0 : f.total;
  res.degenerate = f.degenerate;
  return res;
}

RegularizerResult disentangled_loss(const KernelMatrix& k,
                                    const RegularizerSpec& spec) {
  const PairMask* mask = mask_for(k, spec);
  if (spec.lambda_diag < 0.0)
    fail(ErrorCode::InvalidArgument, "lambda_diag must be non-negative");
  DisentangledParts parts = disentangled_parts(k, mask);
  RegularizerResult res;
  res.corr_component = parts.corr;
  res.diag_component = parts.diag;
  res.total = parts.corr + spec.lambda_diag * parts.diag;
  return res;
}

RegularizerResult evaluate_regularizer(const KernelMatrix& k,
                                       const RegularizerSpec& spec) {
  switch (spec.variant) {
    case RegVariant::Frobenius: return frobenius_loss(k);
    case RegVariant::ScaledFrobenius: return scaled_frobenius_loss(k);
    case RegVariant::Srip: return srip_loss(k, spec);
    case RegVariant::Disentangled:
    case RegVariant::RelaxedDisentangled: return disentangled_loss(k, spec);
  }
  fail(ErrorCode::InvalidArgument, "unknown regularizer variant");
}

RegularizerResult regularizer_gradient(const KernelMatrix& k,
                                       const RegularizerSpec& spec) {
  check_finite(k);
  RegularizerResult res;

  switch (spec.variant) {
    case RegVariant::Frobenius:
    case RegVariant::ScaledFrobenius: {
      Eigen::MatrixXd a = residual(k);
      double fro = a.norm();
      double scale =
          spec.variant == RegVariant::ScaledFrobenius
              ? 1.0 / std::sqrt(static_cast<double>(k.rows()))
              : 1.0;
      res.total = fro * scale;
      if (fro < kNormFloor) {
        res.gradient = zero_like(k);  // at the minimum
      } else {
        res.gradient = (2.0 * scale / fro) * (a * k.values);
      }
      return res;
    }

    case RegVariant::Srip: {
      Eigen::MatrixXd a;
      SripForward f = srip_run(k, spec, &a);
      if (f.degenerate) {
        res.degenerate = true;
        res.gradient = zero_like(k);
        return res;
      }
      res.total = f.total;
      // reverse pass through u_r = A v_{r-1}, v_r = A u_r,
      // total = |v_R| / |u_R|; v0 is a constant
      int rounds = static_cast<int>(f.u.size());
      Eigen::VectorXd vbar = f.v.back() / (f.v_norm * f.u_norm);
      Eigen::VectorXd ubar = -(f.total / (f.u_norm * f.u_norm)) * f.u.back();
      Eigen::MatrixXd abar = Eigen::MatrixXd::Zero(a.rows(), a.cols());
      for (int r = rounds - 1; r >= 0; --r) {
        abar.noalias() += vbar * f.u[static_cast<std::size_t>(r)].transpose();
        ubar.noalias() += a * vbar;  // A is exactly symmetric
        const Eigen::VectorXd& v_prev =
            r == 0 ? f.v0 : f.v[static_cast<std::size_t>(r - 1)];
        abar.noalias() += ubar * v_prev.transpose();
        if (r > 0) {
          vbar = a * ubar;
          ubar.setZero();
        }
      }
      res.gradient = (abar + abar.transpose()) * k.values;
      return res;
    }

    case RegVariant::Disentangled:
    case RegVariant::RelaxedDisentangled: {
      const PairMask* mask = mask_for(k, spec);
      if (spec.lambda_diag < 0.0)
        fail(ErrorCode::InvalidArgument, "lambda_diag must be non-negative");

      Eigen::VectorXd norms = k.values.rowwise().norm();
      for (Eigen::Index j = 0; j < norms.size(); ++j) {
        if (norms[j] < kNormFloor) {
          res.degenerate = true;
          res.gradient = zero_like(k);
          return res;
        }
      }
      DisentangledParts parts = disentangled_parts(k, mask);
      res.corr_component = parts.corr;
      res.diag_component = parts.diag;
      res.total = parts.corr + spec.lambda_diag * parts.diag;

      Eigen::MatrixXd normalized =
          k.values.array().colwise() / norms.array();
      RowMatrix grad = zero_like(k);
      if (parts.corr > 0.0) {
        std::size_t p = 0;
        for (std::uint32_t r = 1; r < parts.tril.order; ++r) {
          for (std::uint32_t c = 0; c < r; ++c, ++p) {
            if (mask && mask->exempts(static_cast<std::uint32_t>(p)))
              continue;
            double corr = parts.tril.entries[p];
            double w = corr / parts.corr;
            grad.row(r) +=
                (w / norms[r]) *
                (normalized.row(c) - corr * normalized.row(r));
            grad.row(c) +=
                (w / norms[c]) *
                (normalized.row(r) - corr * normalized.row(c));
          }
        }
      }
      if (parts.diag > 0.0) {
        for (Eigen::Index j = 0; j < k.rows(); ++j) {
          double g = parts.diag_vec[static_cast<std::size_t>(j)];
          grad.row(j) += spec.lambda_diag * ((g - 1.0) / parts.diag) * 2.0 *
                         k.values.row(j);
        }
      }
      res.gradient = std::move(grad);
      return res;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown regularizer variant");
}

double decomposed_frobenius(const KernelMatrix& k) {
  GramMatrix g = gram(k);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < g.order(); ++j) {
    double d = g.values(j, j) - 1.0;
    sum += d * d;
  }
  for (Eigen::Index r = 1; r < g.order(); ++r)
    for (Eigen::Index c = 0; c < r; ++c)
      sum += 2.0 * g.values(r, c) * g.values(r, c);
  return std::sqrt(sum);
}

NearOrthReport near_orth_report(const KernelMatrix& k, std::string name) {
  NearOrthReport report;
  report.layer_name = std::move(name);
  std::vector<double> diag = diagonal_vector(k);
  double diag_sum = 0.0;
  for (double g : diag) diag_sum += g;
  report.diag_mean = diag_sum / static_cast<double>(diag.size());

  if (k.rows() < 2) {
    report.single_filter = true;
    return report;
  }
  CorrelationLowerTriangle tril = correlation_tril(k);
  double sum = 0.0;
  for (double e : tril.entries) sum += e;
  double mean = sum / static_cast<double>(tril.entries.size());
  double var = 0.0;
  for (double e : tril.entries) var += (e - mean) * (e - mean);
  var /= static_cast<double>(tril.entries.size());  // population variance
  report.tril_mean = mean;
  report.tril_std = std::sqrt(var);
  return report;
}

NearOrthReport aggregate_reports(std::span<const NearOrthReport> reports,
                                 std::string name) {
  if (reports.empty())
    fail(ErrorCode::InvalidArgument, "cannot aggregate zero reports");
  NearOrthReport out;
  out.layer_name = name.empty() ? reports.front().layer_name : std::move(name);
  for (const auto& r : reports) {
    out.tril_mean += r.tril_mean;
    out.tril_std += r.tril_std;
    out.diag_mean += r.diag_mean;
  }
  auto n = static_cast<double>(reports.size());
  out.tril_mean /= n;
  out.tril_std /= n;
  out.diag_mean /= n;
  return out;
}

}  // namespace korth
