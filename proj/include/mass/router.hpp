#pragma once

#include <span>
#include <string>
#include <vector>

#include "mass/linalg.hpp"
#include "mass/subspace.hpp"

namespace mass {

// Which per-task basis the router projects onto: each task's own truncated
// right singular vectors, or that task's block of the jointly orthogonalized
// concatenation used by the merge.
enum class SubspaceSource { raw, orthogonalized };

std::string_view to_string(SubspaceSource s) noexcept;
SubspaceSource parse_subspace_source(std::string_view s);

struct RouterConfig {
  std::string layer;        // routing layer; its input activation is projected
  double eta = 0.2;         // gate threshold on the softmax weights
  std::size_t top_k = 2;    // at most this many tasks are selected
  double temperature = 1.0;
  SubspaceSource source = SubspaceSource::raw;

  void validate() const;
};

struct RoutingDecision {
  Vector residuals;                    // one per candidate task
  Vector weights;                      // softmax(-residuals / temperature)
  std::vector<std::size_t> selected;   // task indices, highest weight first
  std::vector<std::size_t> candidates; // task index of each residual entry
  std::string layer;

  std::string to_json() const;
};

/// Tasks with weight >= eta, capped to the top_k largest (lower index wins a
/// tie). Falls back to {argmax w} when nothing clears the threshold.
std::vector<std::size_t> gate(std::span<const double> weights, double eta, std::size_t top_k);

/// Projection router over a fixed set of task bundles at one layer.
class ProjectionRouter {
 public:
  /// `candidates` lists the task indices the router may pick; empty means all.
  ProjectionRouter(std::span<const TaskSubspaceBundle> bundles, RouterConfig cfg,
                   std::vector<std::size_t> candidates = {});

  Vector residuals(std::span<const double> z) const;
  RoutingDecision route(std::span<const double> z) const;
  /// Residuals averaged over the batch, then a single softmax/gate.
  RoutingDecision batched_route(std::span<const Vector> batch) const;
  /// softmax + gate over a residual vector aligned with candidates().
  RoutingDecision decide(Vector residuals) const;

  const RouterConfig& config() const noexcept { return cfg_; }
  const std::vector<std::size_t>& candidates() const noexcept { return candidates_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const MatrixD& subspace(std::size_t candidate) const { return subspaces_.at(candidate); }

 private:
  RouterConfig cfg_;
  std::vector<std::size_t> candidates_;
  std::vector<MatrixD> subspaces_;
  std::size_t input_dim_ = 0;
};

/// r_i = ||z - V_i V_i^T z|| for every bundle, at `layer`.
Vector residuals(std::span<const double> z, std::span<const TaskSubspaceBundle> bundles,
                 std::string_view layer);

RoutingDecision route(std::span<const double> z, std::span<const TaskSubspaceBundle> bundles,
                      const RouterConfig& cfg);

RoutingDecision batched_route(std::span<const Vector> batch, std::span<const TaskSubspaceBundle> bundles,
                              const RouterConfig& cfg);

struct SupportSample {
  Vector z;
  std::size_t task = 0;
};

/// Task of the support vector with the highest cosine similarity to z; the
/// lowest support index wins a tie.
std::size_t nn_route(std::span<const double> z, std::span<const SupportSample> support);

}  // namespace mass
