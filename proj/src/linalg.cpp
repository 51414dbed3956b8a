#include "mass/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mass/kernels.hpp"

namespace mass {

namespace {

constexpr double kJacobiTolerance = 1e-14;
constexpr int kMaxSweeps = 100;

using Columns = std::vector<Vector>;

Columns to_columns(const MatrixD& m) {
  Columns cols(m.cols(), Vector(m.rows()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) cols[c][r] = m(r, c);
  return cols;
}

// Extends `basis` with unit vectors orthogonal to every column already in it,
// drawn from e_0, e_1, ... in order.
Vector complete_basis(const Columns& basis, std::size_t dim) {
  for (std::size_t e = 0; e < dim; ++e) {
    Vector cand(dim, 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        if (b.empty()) continue;
        const double d = dot(cand, b);
        for (std::size_t i = 0; i < dim; ++i) cand[i] -= d * b[i];
      }
    }
    const double n = norm2(cand);
    if (n > 0.5) {
      for (auto& x : cand) x /= n;
      return cand;
    }
  }
  throw Error(Errc::rank_deficient, "cannot complete orthonormal basis");
}

// One-sided (Hestenes) Jacobi on a tall matrix: rotates column pairs of A
// until they are mutually orthogonal; the accumulated rotations form V.
ThinSvd jacobi_tall(const MatrixD& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Columns w = to_columns(a);
  Columns v(n, Vector(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(w[p], w[p]);
        const double beta = dot(w[q], w[q]);
        const double gamma = dot(w[p], w[q]);
        if (gamma == 0.0 || std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta))
          continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = w[p][i];
          const double xq = w[q][i];
          w[p][i] = c * xp - s * xq;
          w[q][i] = s * xp + c * xq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = v[p][i];
          const double xq = v[q][i];
          v[p][i] = c * xp - s * xq;
          v[q][i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = norm2(w[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  ThinSvd out{MatrixD(m, n), Vector(n), MatrixD(n, n)};
  Columns ucols(n);
  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.s[j] = sigma[src];
    if (sigma[src] > 0.0 && std::isnormal(sigma[src])) {
      ucols[j] = w[src];
      for (auto& x : ucols[j]) x /= sigma[src];
    } else {
      out.s[j] = 0.0;
      missing.push_back(j);
    }
  }
  for (std::size_t j : missing) ucols[j] = complete_basis(ucols, m);

  for (std::size_t j = 0; j < n; ++j) {
    const Vector& uc = ucols[j];
    const Vector& vc = v[order[j]];
    std::size_t pivot = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::abs(uc[i]) > std::abs(uc[pivot])) pivot = i;
    const double sign = uc[pivot] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) out.u(i, j) = sign * uc[i];
    for (std::size_t i = 0; i < n; ++i) out.v(i, j) = sign * vc[i];
  }
  return out;
}

void apply_sign_convention(ThinSvd& svd) {
  for (std::size_t j = 0; j < svd.rank(); ++j) {
    std::size_t pivot = 0;
    for (std::size_t i = 1; i < svd.u.rows(); ++i)
      if (std::abs(svd.u(i, j)) > std::abs(svd.u(pivot, j))) pivot = i;
    if (svd.u(pivot, j) < 0.0) {
      for (std::size_t i = 0; i < svd.u.rows(); ++i) svd.u(i, j) = -svd.u(i, j);
      for (std::size_t i = 0; i < svd.v.rows(); ++i) svd.v(i, j) = -svd.v(i, j);
    }
  }
}

}  // namespace

ThinSvd thin_svd(const MatrixD& m) {
  if (m.rows() == 0 || m.cols() == 0)
    throw Error(Errc::invalid_argument, "thin_svd of an empty matrix");
  if (!m.all_finite()) throw Error(Errc::non_finite, "thin_svd input contains NaN or Inf");
  if (m.rows() >= m.cols()) return jacobi_tall(m);
  // M^T = U' S V'^T  =>  M = V' S U'^T
  ThinSvd t = jacobi_tall(m.transposed());
  ThinSvd out{std::move(t.v), std::move(t.s), std::move(t.u)};
  apply_sign_convention(out);
  return out;
}

ThinSvd thin_svd(const Matrix& m) { return thin_svd(m.cast<double>()); }

ThinSvd truncate_svd(const ThinSvd& svd, std::size_t k) {
  if (k == 0 || k > svd.rank()) {
    std::ostringstream msg;
    msg << "truncation rank " << k << " outside [1, " << svd.rank() << "]";
    throw Error(Errc::rank_too_large, msg.str());
  }
  return ThinSvd{svd.u.left_columns(k), Vector(svd.s.begin(), svd.s.begin() + static_cast<std::ptrdiff_t>(k)),
                 svd.v.left_columns(k)};
}

MatrixD reconstruct(const ThinSvd& svd) { return kernels::scaled_outer(svd.u, svd.s, svd.v); }

MatrixD orthogonalize(const MatrixD& m) {
  if (m.cols() > m.rows()) {
    std::ostringstream msg;
    msg << "orthogonalize needs cols <= rows, got " << m.rows() << "x" << m.cols();
    throw Error(Errc::rank_too_large, msg.str());
  }
  const ThinSvd svd = thin_svd(m);
  const double largest = svd.s.front();
  const double smallest = svd.s.back();
  if (!(largest > 0.0) || smallest <= kRankDeficiencyCutoff * largest) {
    std::ostringstream msg;
    msg << "column rank deficient: smallest singular value " << smallest << " vs largest "
        << largest << " (ratio " << (largest > 0.0 ? smallest / largest : 0.0)
        << ", cutoff " << kRankDeficiencyCutoff << ")";
    throw Error(Errc::rank_deficient, msg.str());
  }
  return kernels::matmul(svd.u, svd.v.transposed());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(Errc::dimension_mismatch, "cosine_similarity length mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0)
    throw Error(Errc::invalid_argument, "cosine similarity of a zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector softmax_neg(std::span<const double> residuals, double temperature) {
  if (residuals.empty()) throw Error(Errc::empty_input, "softmax over an empty residual vector");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error(Errc::invalid_argument, "softmax temperature must be positive");
  for (double r : residuals)
    if (!std::isfinite(r)) throw Error(Errc::non_finite, "softmax residual is not finite");
  const double lo = *std::min_element(residuals.begin(), residuals.end());
  Vector w(residuals.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(-(residuals[i] - lo) / temperature);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

double project_residual(std::span<const double> z, const MatrixD& v) {
  if (z.size() != v.rows()) {
    std::ostringstream msg;
    msg << "vector of length " << z.size() << " against subspace with " << v.rows() << " rows";
    throw Error(Errc::dimension_mismatch, msg.str());
  }
  return kernels::projection_residual(z, v);
}

double orthonormality_error(const MatrixD& v) {
  double s = 0.0;
  for (std::size_t a = 0; a < v.cols(); ++a) {
    for (std::size_t b = 0; b < v.cols(); ++b) {
      double g = 0.0;
      for (std::size_t r = 0; r < v.rows(); ++r) g += v(r, a) * v(r, b);
      const double d = g - (a == b ? 1.0 : 0.0);
      s += d * d;
    }
  }
  return std::sqrt(s);
}

MatrixD hconcat(std::span<const MatrixD> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error(Errc::dimension_mismatch, "hconcat row counts differ");
    cols += p.cols();
  }
  MatrixD out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p(r, c);
    offset += p.cols();
  }
  return out;
}

}  // namespace mass
