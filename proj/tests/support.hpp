#pragma once

// Shared test helpers: deterministic random inputs, a central
// finite-difference oracle, and a dense eigensolve oracle. The oracles are
// deliberately independent of the library's own computation paths.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "core/measures.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace testsupport {

inline korth::KernelMatrix random_kernel(std::uint32_t o, std::uint32_t d,
                                         std::uint64_t seed,
                                         double scale = 0.5) {
  korth::rng::Engine eng(seed);
  korth::KernelMatrix k;
  k.values.resize(o, d);
  for (std::uint32_t r = 0; r < o; ++r)
    for (std::uint32_t c = 0; c < d; ++c) k.values(r, c) = scale * eng.normal();
  k.source = "random";
  return k;
}

inline korth::KernelTensor random_tensor(std::uint32_t o, std::uint32_t i,
                                         std::uint32_t kh, std::uint32_t kw,
                                         std::uint64_t seed,
                                         double scale = 0.5) {
  korth::rng::Engine eng(seed);
  std::vector<double> data(static_cast<std::size_t>(o) * i * kh * kw);
  for (double& v : data) v = scale * eng.normal();
  return korth::make_tensor("random", o, i, kh, kw, std::move(data));
}

// Largest singular value of K K^T - I via a dense symmetric eigensolve;
// the matrix is symmetric so this is the largest absolute eigenvalue.
inline double sigma_max_oracle(const korth::KernelMatrix& k) {
  Eigen::MatrixXd a = k.values * k.values.transpose();
  a.diagonal().array() -= 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  const Eigen::VectorXd& ev = solver.eigenvalues();
  return std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
}

// Gap between the two largest absolute eigenvalues of K K^T - I.
inline double spectral_gap_oracle(const korth::KernelMatrix& k) {
  Eigen::MatrixXd a = k.values * k.values.transpose();
  a.diagonal().array() -= 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  std::vector<double> mags;
  for (Eigen::Index j = 0; j < solver.eigenvalues().size(); ++j)
    mags.push_back(std::abs(solver.eigenvalues()(j)));
  std::sort(mags.begin(), mags.end(), std::greater<>());
  return mags.size() < 2 ? mags.front() : mags[0] - mags[1];
}

// Central finite differences of an arbitrary scalar function of the kernel.
template <typename Fn>
korth::RowMatrix fd_gradient(korth::KernelMatrix k, Fn&& loss, double step) {
  korth::RowMatrix grad(k.rows(), k.cols());
  for (Eigen::Index r = 0; r < k.rows(); ++r) {
    for (Eigen::Index c = 0; c < k.cols(); ++c) {
      const double saved = k.values(r, c);
      k.values(r, c) = saved + step;
      const double plus = loss(k);
      k.values(r, c) = saved - step;
      const double minus = loss(k);
      k.values(r, c) = saved;
      grad(r, c) = (plus - minus) / (2.0 * step);
    }
  }
  return grad;
}

inline double relative_error(const korth::RowMatrix& analytic,
                             const korth::RowMatrix& reference) {
  return (analytic - reference).norm() / std::max(reference.norm(), 1e-12);
}

}  // namespace testsupport
