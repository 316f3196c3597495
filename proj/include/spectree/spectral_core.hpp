#pragma once

// Linear-algebra primitives shared by the quartet test, the model simulator
// and the reconstruction algorithm. Only singular values are ever needed;
// singular vectors are never computed.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace spectree {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Singular values below this fraction of sigma_1 are reported as exact zeros.
inline constexpr double kRankTolerance = 1e-12;

// Below this magnitude a product of singular values is accumulated in log space.
inline constexpr double kLogSpaceCutoff = 1e-150;

struct SingularSpectrum {
  std::vector<double> values;  // descending, non-negative
  std::size_t k = 0;

  double operator[](std::size_t s) const { return values[s]; }
  std::size_t size() const { return values.size(); }
};

// Throws NumericError if any entry is NaN or infinite, DimensionError if empty.
void require_finite(const Matrix& m);

// The k largest singular values of m in descending order.
SingularSpectrum top_singular_values(const Matrix& m, std::size_t k);

// Product of the k largest singular values.
double det_k(const Matrix& m, std::size_t k);

// Natural log of det_k; -infinity when the product is zero.
double log_det_k(const Matrix& m, std::size_t k);

// sigma_1(m).
double spectral_norm(const Matrix& m);

// [a]_+ = max(0, a).
inline double clamp_nonneg(double a) { return a > 0.0 ? a : 0.0; }

// Product of non-negative factors. Switches to a log-space sum when any
// factor is tiny so that long products of small values do not underflow
// before being compared. The result is always reported as a log value.
struct FactorProduct {
  double log_value = 0.0;  // -infinity for an exact zero
  bool log_space = false;  // true when accumulated as a sum of logs
  double direct = 1.0;     // valid only when !log_space

  static FactorProduct of(std::span<const double> factors);
};

// Symmetric positive definite inverse square root. Throws NumericError when
// the smallest eigenvalue is not positive relative to the largest.
Matrix inverse_sqrt_spd(const Matrix& m);

}  // namespace spectree
