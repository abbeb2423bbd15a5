#pragma once

#include <cmath>
#include <cstdlib>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fieldqc/errors.hpp"
#include "fieldqc/grf.hpp"

namespace fieldqc::grf {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// rho^0 .. rho^(n-1).
template <typename Scalar>
std::vector<Scalar> power_table(Scalar rho, int n) {
  std::vector<Scalar> out(static_cast<std::size_t>(std::max(n, 1)));
  out[0] = Scalar(1);
  for (int k = 1; k < n; ++k) out[k] = out[k - 1] * rho;
  return out;
}

/// Unit-variance mixture (1-phi) R + phi I, with R the separable AR(1) correlation.
template <typename Scalar>
Matrix<Scalar> correlation_matrix(std::span<const PlotCoord> coords, Scalar rho_r, Scalar rho_c,
                                  Scalar phi) {
  const auto n = static_cast<Eigen::Index>(coords.size());
  int i0 = 0, i1 = 0, j0 = 0, j1 = 0;
  if (n > 0) {
    i0 = i1 = coords.front().i;
    j0 = j1 = coords.front().j;
  }
  for (const auto& c : coords) {
    i0 = std::min(i0, c.i);
    i1 = std::max(i1, c.i);
    j0 = std::min(j0, c.j);
    j1 = std::max(j1, c.j);
  }
  const auto pr = power_table(rho_r, i1 - i0 + 1);
  const auto pc = power_table(rho_c, j1 - j0 + 1);
  const Scalar w = Scalar(1) - phi;
  Matrix<Scalar> v(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    v(a, a) = Scalar(1);
    for (Eigen::Index b = 0; b < a; ++b) {
      const int di = std::abs(coords[a].i - coords[b].i);
      const int dj = std::abs(coords[a].j - coords[b].j);
      const Scalar r = w * pr[di] * pc[dj];
      v(a, b) = r;
      v(b, a) = r;
    }
  }
  return v;
}

/// sigma2 * [(1-phi) rho_r^|di| rho_c^|dj| + phi 1{a=b}].
template <typename Scalar>
Matrix<Scalar> build_covariance(std::span<const PlotCoord> coords, GrfFamily family,
                                const BasicGrfParams<Scalar>& p) {
  using std::isfinite;
  if (!isfinite(p.mu) || !isfinite(p.sigma2) || !isfinite(p.rho_r) || !isfinite(p.rho_c) ||
      !isfinite(p.phi))
    throw ParamError("non-finite GRF parameter");
  if (!(p.sigma2 > Scalar(0))) throw ParamError("sigma2 must be positive");
  const Scalar rr = family.has_row() ? p.rho_r : Scalar(0);
  const Scalar rc = family.has_col() ? p.rho_c : Scalar(0);
  const Scalar ph = family.nugget ? p.phi : Scalar(0);
  return p.sigma2 * correlation_matrix<Scalar>(coords, rr, rc, ph);
}

/// Cholesky with the jitter policy: one retry with 1e-10 * mean diagonal added.
template <typename Scalar>
Eigen::LLT<Matrix<Scalar>> factorize(Matrix<Scalar> cov) {
  Eigen::LLT<Matrix<Scalar>> llt(cov);
  if (llt.info() == Eigen::Success) return llt;
  const Scalar jitter = Scalar(1e-10) * cov.diagonal().mean();
  cov.diagonal().array() += jitter;
  llt.compute(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  return llt;
}

/// log N(y; mean, cov) through a Cholesky factorization.
template <typename Scalar>
Scalar gaussian_log_density(const Vector<Scalar>& y, const Vector<Scalar>& mean,
                            const Matrix<Scalar>& cov) {
  using std::log;
  const auto llt = factorize<Scalar>(cov);
  const Vector<Scalar> r = llt.matrixL().solve(y - mean);
  Scalar logdet(0);
  for (Eigen::Index k = 0; k < cov.rows(); ++k) logdet += log(llt.matrixL()(k, k));
  const Scalar n = static_cast<Scalar>(y.size());
  const Scalar two_pi = Scalar(2) * Scalar(3.14159265358979323846264338327950288L);
  return -Scalar(0.5) * n * log(two_pi) - logdet - Scalar(0.5) * r.squaredNorm();
}

/// Stationary AR(1) correlation over n equally spaced positions.
template <typename Scalar>
Matrix<Scalar> ar1_matrix(Scalar rho, int n) {
  const auto p = power_table(rho, n);
  Matrix<Scalar> m(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) m(a, b) = p[std::abs(a - b)];
  return m;
}

/// Kronecker product a (x) b.
template <typename Scalar>
Matrix<Scalar> kronecker(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  Matrix<Scalar> out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace fieldqc::grf
