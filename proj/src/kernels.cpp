#include "mass/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mass::kernels {

namespace {

void check_matmul(const MatrixD& a, const MatrixD& b) {
  if (a.cols() != b.rows())
    throw Error(Errc::dimension_mismatch, "matmul inner dimensions differ");
}

void check_scaled_outer(const MatrixD& a, std::span<const double> s, const MatrixD& b) {
  if (a.cols() != s.size() || b.cols() != s.size())
    throw Error(Errc::dimension_mismatch, "scaled_outer factor widths differ");
}

void check_affine(const Matrix& w, std::span<const float> bias, std::size_t in_dim) {
  if (w.cols() != in_dim)
    throw Error(Errc::dimension_mismatch, "affine input dimension differs from weight columns");
  if (!bias.empty() && bias.size() != w.rows())
    throw Error(Errc::dimension_mismatch, "affine bias length differs from weight rows");
}

void check_residuals(const MatrixD& z, const MatrixD& v) {
  if (z.cols() != v.rows())
    throw Error(Errc::dimension_mismatch, "activation dimension differs from subspace rows");
}

// The row bodies are shared by the serial and parallel drivers so both sum in
// the same order.
inline void matmul_row(const MatrixD& a, const MatrixD& b, MatrixD& out, std::size_t i) {
  auto o = out.row(i);
  for (std::size_t p = 0; p < a.cols(); ++p) {
    const double aip = a(i, p);
    if (aip == 0.0) continue;
    auto br = b.row(p);
    for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aip * br[j];
  }
}

inline void scaled_outer_row(const MatrixD& a, std::span<const double> s, const MatrixD& b,
                             MatrixD& out, std::size_t i) {
  const std::size_t k = s.size();
  auto o = out.row(i);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * s[p] * b(j, p);
    o[j] = acc;
  }
}

inline void affine_into(const Matrix& w, std::span<const float> bias,
                        std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto wr = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += static_cast<double>(wr[c]) * x[c];
    if (!bias.empty()) acc += static_cast<double>(bias[r]);
    y[r] = acc;
  }
}

inline double residual_of(std::span<const double> z, const MatrixD& v) {
  const std::size_t n = v.rows();
  const std::size_t k = v.cols();
  Vector coeff(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto vr = v.row(r);
    for (std::size_t p = 0; p < k; ++p) coeff[p] += vr[p] * z[r];
  }
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto vr = v.row(r);
    double proj = 0.0;
    for (std::size_t p = 0; p < k; ++p) proj += vr[p] * coeff[p];
    const double d = z[r] - proj;
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) noexcept {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  check_matmul(a, b);
  MatrixD out(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
  return out;
}

MatrixD scaled_outer(const MatrixD& a, std::span<const double> s, const MatrixD& b) {
  check_scaled_outer(a, s, b);
  MatrixD out(a.rows(), b.rows());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    scaled_outer_row(a, s, b, out, static_cast<std::size_t>(i));
  return out;
}

MatrixD affine_batch(const Matrix& w, std::span<const float> bias, const MatrixD& x) {
  check_affine(w, bias, x.cols());
  MatrixD out(x.rows(), w.rows());
  const auto n = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    affine_into(w, bias, x.row(s), out.row(s));
  }
  return out;
}

Vector projection_residuals(const MatrixD& z, const MatrixD& v) {
  check_residuals(z, v);
  Vector out(z.rows());
  const auto n = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto s = static_cast<std::size_t>(i);
    out[s] = residual_of(z.row(s), v);
  }
  return out;
}

Vector affine(const Matrix& w, std::span<const float> bias, std::span<const double> x) {
  check_affine(w, bias, x.size());
  Vector y(w.rows());
  affine_into(w, bias, x, y);
  return y;
}

double projection_residual(std::span<const double> z, const MatrixD& v) {
  if (z.size() != v.rows())
    throw Error(Errc::dimension_mismatch, "activation dimension differs from subspace rows");
  return residual_of(z, v);
}

namespace reference {

MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  check_matmul(a, b);
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
  return out;
}

MatrixD scaled_outer(const MatrixD& a, std::span<const double> s, const MatrixD& b) {
  check_scaled_outer(a, s, b);
  MatrixD out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) scaled_outer_row(a, s, b, out, i);
  return out;
}

MatrixD affine_batch(const Matrix& w, std::span<const float> bias, const MatrixD& x) {
  check_affine(w, bias, x.cols());
  MatrixD out(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) affine_into(w, bias, x.row(i), out.row(i));
  return out;
}

Vector projection_residuals(const MatrixD& z, const MatrixD& v) {
  check_residuals(z, v);
  Vector out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) out[i] = residual_of(z.row(i), v);
  return out;
}

}  // namespace reference

}  // namespace mass::kernels
