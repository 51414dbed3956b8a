#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mass/checkpoint.hpp"
#include "mass/subspace.hpp"

namespace mass {

enum class FilterScope { global, per_layer };

std::string_view to_string(FilterScope s) noexcept;
FilterScope parse_filter_scope(std::string_view s);

struct MergeConfig {
  double alpha = 1.0;
  std::size_t rank_k = 0;  // 0: default_rank() with the 1/T rule
  double epsilon = 0.3;
  FilterScope filter_scope = FilterScope::global;
  bool strict_rank = false;  // error instead of shrinking ranks that overflow min(m, n)
};

struct Provenance {
  std::string method;
  double alpha = 1.0;
  double epsilon = 0.0;  // 0 when no redundancy filter ran
  std::vector<std::string> task_ids;
  std::vector<std::size_t> admitted;  // indices into task_ids
  std::map<std::string, std::vector<std::size_t>> admitted_per_layer;  // per-layer filter only
  std::map<std::string, std::vector<std::size_t>> ranks;  // per layer, per merged task

  std::string to_json() const;
};

struct MergedModel {
  Checkpoint weights;
  Provenance provenance;
};

/// Singular values at or below this fraction of the largest one in a layer are
/// dropped before concatenation; their rank-one terms are numerically zero and
/// their singular vectors are arbitrary.
inline constexpr double kNegligibleSingularValue = 1e-6;

/// Subspace-aware merge: per layer, concatenate the task factors, replace the
/// concatenations by their nearest orthonormal matrices and reconstruct
/// U_perp diag(S) V_perp^T. Biases are summed untruncated.
MergedModel tsv_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles, double alpha,
                      bool strict_rank = false);

/// As tsv_merge, but each layer merges only the bundles listed for it.
MergedModel tsv_merge_layerwise(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                                const std::map<std::string, std::vector<std::size_t>>& members,
                                double alpha, bool strict_rank = false);

/// pre + alpha * sum_i U_i diag(S_i) V_i^T, without orthogonalization.
MergedModel subspace_sum_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                               double alpha);

/// pre + alpha * sum_i delta_i
MergedModel task_arithmetic_merge(const Checkpoint& pre, std::span<const TaskDelta> deltas, double alpha);

/// Elementwise mean of the layers; heads are collected from every input.
MergedModel weight_average(std::span<const Checkpoint> checkpoints);

struct FixedMerge {
  MergedModel model;
  std::vector<TaskSubspaceBundle> bundles;  // one per input task, admitted or not
  std::vector<std::size_t> admitted;
};

/// Redundancy filter, per-task decomposition and tsv_merge in one step.
FixedMerge fixed_merge(const Checkpoint& pre, std::span<const TaskDelta> deltas, const MergeConfig& cfg);

/// Per-layer truncation ranks the config implies for `task_count` tasks.
std::vector<std::size_t> ranks_for(const TaskDelta& d, const MergeConfig& cfg, std::size_t task_count);

}  // namespace mass
