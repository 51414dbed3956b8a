#pragma once

#include <cstddef>
#include <span>

#include "mass/matrix.hpp"

namespace mass {

/// Thin singular value decomposition M = U diag(S) V^T with r = min(m, n).
///
/// S is non-negative and non-increasing. For every column pair the entry of
/// largest magnitude in U's column is non-negative (lowest row index wins a
/// tie), which makes the factors reproducible bit-for-bit.
struct ThinSvd {
  MatrixD u;  // m x r
  Vector s;   // r
  MatrixD v;  // n x r

  std::size_t rank() const noexcept { return s.size(); }
};

/// One-sided Jacobi SVD in double precision. Throws Errc::non_finite on NaN/Inf.
ThinSvd thin_svd(const MatrixD& m);
ThinSvd thin_svd(const Matrix& m);

/// Keeps the leading k singular triplets (best rank-k Frobenius approximation).
ThinSvd truncate_svd(const ThinSvd& svd, std::size_t k);

/// U diag(S) V^T
MatrixD reconstruct(const ThinSvd& svd);

/// Relative cutoff below which orthogonalize() treats its input as rank deficient.
inline constexpr double kRankDeficiencyCutoff = 1e-8;

/// Nearest matrix with orthonormal columns (polar factor P Q^T of M = P S Q^T).
/// Requires cols <= rows and smallest/largest singular value > 1e-8.
MatrixD orthogonalize(const MatrixD& m);

/// a.b / (|a||b|); throws Errc::invalid_argument for a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// w_i = exp(-r_i / t) / sum_j exp(-r_j / t), shifted by min(r) for stability.
Vector softmax_neg(std::span<const double> residuals, double temperature = 1.0);

/// ||z - V V^T z||_2 for V with orthonormal columns.
double project_residual(std::span<const double> z, const MatrixD& v);

/// ||V^T V - I||_F
double orthonormality_error(const MatrixD& v);

/// Columnwise concatenation [a | b | ...]; all parts must share a row count.
MatrixD hconcat(std::span<const MatrixD> parts);

}  // namespace mass
