#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace korth {

// Row norms below this are treated as degenerate filters.
inline constexpr double kNormFloor = 1e-12;

// K * K^T with exact symmetry: the lower triangle is computed once and
// mirrored.
struct GramMatrix {
  Eigen::MatrixXd values;

  Eigen::Index order() const { return values.rows(); }
};

GramMatrix gram(const KernelMatrix& k);

// Strict lower triangle of the correlation matrix, flattened in
// row-then-column order: pairs (r, c) with r > c, r ascending, c ascending
// within a row.
struct CorrelationLowerTriangle {
  std::uint32_t order = 0;          // number of filters o
  std::vector<double> entries;      // o*(o-1)/2 values

  static std::size_t pair_count(std::uint32_t o) {
    return static_cast<std::size_t>(o) * (o - 1) / 2;
  }
  static std::size_t pair_index(std::uint32_t row, std::uint32_t col) {
    return static_cast<std::size_t>(row) * (row - 1) / 2 + col;
  }
  static std::pair<std::uint32_t, std::uint32_t> pair_at(std::size_t index);
};

CorrelationLowerTriangle correlation_tril(const KernelMatrix& k);

// Squared filter norms <k_j, k_j>.
std::vector<double> diagonal_vector(const KernelMatrix& k);

enum class RegVariant {
  Frobenius,
  ScaledFrobenius,
  Srip,
  Disentangled,
  RelaxedDisentangled,
};

const char* reg_variant_name(RegVariant v);
RegVariant reg_variant_from_name(const std::string& name);

// Pairs exempted from the correlation loss, as indices into the
// CorrelationLowerTriangle ordering. Indices are sorted and unique.
struct PairMask {
  std::uint32_t order = 0;
  std::vector<std::uint32_t> exempt;

  bool exempts(std::uint32_t pair) const;
};

struct RegularizerSpec {
  RegVariant variant = RegVariant::Disentangled;
  double lambda_diag = 0.1;
  int power_iterations = 2;
  std::uint64_t seed = 0;
  std::optional<PairMask> exemption_mask;  // RelaxedDisentangled only
};

struct RegularizerResult {
  double total = 0.0;
  double corr_component = 0.0;
  double diag_component = 0.0;
  std::optional<RowMatrix> gradient;
  bool degenerate = false;
};

RegularizerResult frobenius_loss(const KernelMatrix& k);
RegularizerResult scaled_frobenius_loss(const KernelMatrix& k);
RegularizerResult srip_loss(const KernelMatrix& k, const RegularizerSpec& spec);
RegularizerResult disentangled_loss(const KernelMatrix& k,
                                    const RegularizerSpec& spec);

// Dispatch on spec.variant; value only.
RegularizerResult evaluate_regularizer(const KernelMatrix& k,
                                       const RegularizerSpec& spec);

// Value plus d(total)/dK. SRIP differentiates through the unrolled power
// iteration with the seeded start vector held constant. Degenerate inputs
// (zero-norm rows; vanished power-iteration vector) yield a zero gradient
// with the degenerate flag set instead of an error.
RegularizerResult regularizer_gradient(const KernelMatrix& k,
                                       const RegularizerSpec& spec);

// sqrt(sum_j (diag_j - 1)^2 + 2 sum_p tril_p^2) from the raw Gram entries;
// algebraically equal to frobenius_loss(k).total.
double decomposed_frobenius(const KernelMatrix& k);

struct NearOrthReport {
  std::string layer_name;
  double tril_mean = 0.0;
  double tril_std = 0.0;   // population standard deviation
  double diag_mean = 0.0;  // mean of squared filter norms
  bool single_filter = false;
};

NearOrthReport near_orth_report(const KernelMatrix& k, std::string name);

// Arithmetic mean of each statistic across a group of layers sharing a
// shape.
NearOrthReport aggregate_reports(std::span<const NearOrthReport> reports,
                                 std::string name = {});

}  // namespace korth
