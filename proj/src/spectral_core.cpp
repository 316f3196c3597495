#include "spectree/spectral_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "spectree/errors.hpp"

namespace spectree {

void require_finite(const Matrix& m) {
  if (m.rows() < 1 || m.cols() < 1) {
    throw DimensionError("matrix must have at least one row and one column");
  }
  if (!m.allFinite()) throw NumericError("matrix has non-finite entries");
}

SingularSpectrum top_singular_values(const Matrix& m, std::size_t k) {
  require_finite(m);
  const auto min_dim = static_cast<std::size_t>(std::min(m.rows(), m.cols()));
  if (k == 0) throw DimensionError("rank must be at least 1");
  if (k > min_dim) {
    throw DimensionError("rank " + std::to_string(k) + " exceeds min(rows, cols) = " +
                         std::to_string(min_dim));
  }
  SingularSpectrum out;
  out.k = k;

  // One-sided Jacobi keeps high relative accuracy on the small singular values.
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& sv = svd.singularValues();
  const double cutoff = kRankTolerance * sv(0);
  out.values.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    const double v = sv(static_cast<Eigen::Index>(s));
    out.values.push_back(v <= cutoff ? 0.0 : v);
  }
  return out;
}

FactorProduct FactorProduct::of(std::span<const double> factors) {
  FactorProduct p;
  double log_acc = 0.0;
  bool tiny = false;
  for (double f : factors) {
    if (f < kLogSpaceCutoff) tiny = true;
    if (f <= 0.0) {
      log_acc = -std::numeric_limits<double>::infinity();
      break;
    }
    log_acc += std::log(f);
  }
  // Many moderate factors can still under- or overflow the running product.
  const double log_cut = std::log(kLogSpaceCutoff);
  if (tiny || log_acc < log_cut || log_acc > -log_cut) {
    p.log_space = true;
    p.log_value = log_acc;
    p.direct = std::exp(log_acc);
  } else {
    double acc = 1.0;
    for (double f : factors) acc *= f;
    p.direct = acc;
    p.log_value = std::log(acc);
  }
  return p;
}

double det_k(const Matrix& m, std::size_t k) {
  const auto spec = top_singular_values(m, k);
  const auto p = FactorProduct::of(spec.values);
  return p.log_space ? std::exp(p.log_value) : p.direct;
}

double log_det_k(const Matrix& m, std::size_t k) {
  const auto spec = top_singular_values(m, k);
  return FactorProduct::of(spec.values).log_value;
}

double spectral_norm(const Matrix& m) {
  require_finite(m);
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

Matrix inverse_sqrt_spd(const Matrix& m) {
  require_finite(m);
  if (m.rows() != m.cols()) throw DimensionError("inverse square root needs a square matrix");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  const Vector& lambda = eig.eigenvalues();
  const double top = lambda.cwiseAbs().maxCoeff();
  if (lambda.minCoeff() <= kRankTolerance * top) {
    throw NumericError("second-moment matrix is singular; cannot whiten");
  }
  return eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace spectree
