#pragma once

// Seeded generators and independent oracles shared by the test binaries.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mass/checkpoint.hpp"
#include "mass/linalg.hpp"
#include "mass/subspace.hpp"

namespace mass::test {

using Rng = std::mt19937_64;

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline MatrixD random_matrix(Rng& rng, std::size_t m, std::size_t n, double scale = 1.0) {
  MatrixD out(m, n);
  for (double& x : out.data()) x = scale * gaussian(rng);
  return out;
}

inline Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v) x = scale * gaussian(rng);
  return v;
}

// Orthonormal columns via Eigen's Householder QR, independent of the library.
inline MatrixD random_orthonormal(Rng& rng, std::size_t n, std::size_t k) {
  Eigen::MatrixXd g(n, k);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = gaussian(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                                     static_cast<Eigen::Index>(k));
  MatrixD out(n, k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return out;
}

inline Eigen::MatrixXd to_eigen(const MatrixD& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  return out;
}

inline MatrixD from_eigen(const Eigen::MatrixXd& m) {
  MatrixD out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return out;
}

// Singular values from the eigenvalues of the Gram matrix, descending.
inline Vector gram_singular_values(const MatrixD& m) {
  const Eigen::MatrixXd a = to_eigen(m);
  const Eigen::MatrixXd g = a.rows() >= a.cols() ? Eigen::MatrixXd(a.transpose() * a) : Eigen::MatrixXd(a * a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  Vector out;
  for (Eigen::Index i = es.eigenvalues().size() - 1; i >= 0; --i) out.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  return out;
}

// Polar factor M (M^T M)^{-1/2} through the eigendecomposition of M^T M.
inline MatrixD gram_polar_factor(const MatrixD& m) {
  const Eigen::MatrixXd a = to_eigen(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd root = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
  return from_eigen(a * root);
}

inline Matrix random_float_matrix(Rng& rng, std::size_t m, std::size_t n, double scale = 1.0) {
  return random_matrix(rng, m, n, scale).cast<float>();
}

inline std::vector<float> random_floats(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> out(n);
  for (float& x : out) x = static_cast<float>(scale * gaussian(rng));
  return out;
}

// Dense model with widths[l] -> widths[l+1] layers and `heads` heads.
inline Checkpoint random_checkpoint(Rng& rng, const std::vector<std::size_t>& widths, std::size_t heads = 0,
                                    bool biases = true) {
  Checkpoint c;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer;
    layer.name = "layer" + std::to_string(l);
    layer.weights = random_float_matrix(rng, widths[l + 1], widths[l], 1.0 / std::sqrt(static_cast<double>(widths[l])));
    if (biases) layer.bias = random_floats(rng, widths[l + 1], 0.1);
    layer.activation = static_cast<Activation>(l % 3);
    c.layers.push_back(std::move(layer));
  }
  for (std::size_t h = 0; h < heads; ++h) {
    Head head;
    head.name = "head" + std::to_string(h);
    head.weights = random_float_matrix(rng, 2 + h, widths.back());
    head.bias = random_floats(rng, 2 + h, 0.1);
    c.heads.push_back(std::move(head));
  }
  return c;
}

// pre + a random rank-`rank` perturbation (plus a bias shift) on every layer.
inline Checkpoint perturbed(Rng& rng, const Checkpoint& pre, std::size_t rank, double scale = 0.5) {
  Checkpoint ft = pre;
  for (Layer& l : ft.layers) {
    const std::size_t k = std::min({rank, l.weights.rows(), l.weights.cols()});
    const MatrixD a = random_matrix(rng, l.weights.rows(), k, scale);
    const MatrixD b = random_matrix(rng, l.weights.cols(), k, 1.0);
    for (std::size_t r = 0; r < l.weights.rows(); ++r)
      for (std::size_t c = 0; c < l.weights.cols(); ++c) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a(r, p) * b(c, p);
        l.weights(r, c) = static_cast<float>(l.weights(r, c) + acc);
      }
    for (float& x : l.bias) x = static_cast<float>(x + 0.05 * gaussian(rng));
  }
  return ft;
}

inline double max_abs_difference(const Checkpoint& a, const Checkpoint& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    worst = std::max(worst, mass::max_abs_difference(a.layers[l].weights, b.layers[l].weights));
    for (std::size_t k = 0; k < a.layers[l].bias.size(); ++k)
      worst = std::max(worst, std::abs(static_cast<double>(a.layers[l].bias[k]) - b.layers[l].bias[k]));
  }
  return worst;
}

}  // namespace mass::test
