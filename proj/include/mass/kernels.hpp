#pragma once

// Data-parallel dense kernels. The functions in `mass::kernels` are OpenMP
// parallel over independent output rows / samples; `mass::kernels::reference`
// holds the serial versions they are tested against. Each output element is
// accumulated in the same order in both, so results are bit-identical.

#include <optional>
#include <span>
#include <vector>

#include "mass/matrix.hpp"

namespace mass::kernels {

// Number of worker threads used by the parallel kernels (1 without OpenMP).
int max_threads() noexcept;
void set_threads(int n) noexcept;

// A * B
MatrixD matmul(const MatrixD& a, const MatrixD& b);

// A * diag(s) * B^T, with A m x k, B n x k.
MatrixD scaled_outer(const MatrixD& a, std::span<const double> s, const MatrixD& b);

// Row-wise affine map for a batch: out[i] = W * x[i] + bias.
// `x` is N x cols(W); result is N x rows(W).
MatrixD affine_batch(const Matrix& w, std::span<const float> bias, const MatrixD& x);

// Per-sample residual norms ||z_i - V V^T z_i||. `z` is N x n, `v` is n x k.
Vector projection_residuals(const MatrixD& z, const MatrixD& v);

// Single-vector versions; serial, meant to be called from parallel loops.
Vector affine(const Matrix& w, std::span<const float> bias, std::span<const double> x);
double projection_residual(std::span<const double> z, const MatrixD& v);

namespace reference {

MatrixD matmul(const MatrixD& a, const MatrixD& b);
MatrixD scaled_outer(const MatrixD& a, std::span<const double> s, const MatrixD& b);
MatrixD affine_batch(const Matrix& w, std::span<const float> bias, const MatrixD& x);
Vector projection_residuals(const MatrixD& z, const MatrixD& v);

}  // namespace reference

}  // namespace mass::kernels
