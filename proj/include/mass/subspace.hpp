#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mass/checkpoint.hpp"
#include "mass/mtsv.hpp"

namespace mass {

// Truncated singular factors of one layer's task matrix. Stored in f32 so a
// bundle survives a round trip through the container unchanged.
struct LayerFactors {
  std::string name;
  Matrix u;                 // m x k
  std::vector<float> s;     // k, non-increasing
  Matrix v;                 // n x k
  std::vector<float> bias;  // bias delta, passed through untruncated; may be empty

  std::size_t rank() const noexcept { return s.size(); }
  bool operator==(const LayerFactors&) const = default;
};

struct TaskSubspaceBundle {
  std::string task_id;
  std::vector<LayerFactors> layers;

  const LayerFactors& layer(std::string_view name) const;
  bool operator==(const TaskSubspaceBundle&) const = default;
};

/// max(1, floor(min(m, n) / tasks)): every task gets a 1/T share of the rank.
std::size_t default_rank(std::size_t m, std::size_t n, std::size_t tasks);

/// Rank k for every layer; throws Errc::rank_too_large if k exceeds a layer's min(m, n).
std::vector<std::size_t> uniform_ranks(const TaskDelta& d, std::size_t k);
/// default_rank() for every layer.
std::vector<std::size_t> default_ranks(const TaskDelta& d, std::size_t tasks);

TaskSubspaceBundle decompose_task(const TaskDelta& d, std::span<const std::size_t> ranks);

/// Greedy redundancy scan in input order: task i is admitted iff its cosine
/// similarity to every previously admitted vector is strictly below epsilon.
/// The first vector is always admitted. Throws on zero-norm input.
std::vector<std::size_t> filter_redundant_vectors(std::span<const Vector> vectors, double epsilon);

/// Whole-model scan over flatten(delta).
std::vector<std::size_t> filter_redundant(std::span<const TaskDelta> deltas, double epsilon);

/// Independent scan per layer. Tasks whose delta at a layer is exactly zero
/// are left out of that layer's set instead of failing the scan.
std::map<std::string, std::vector<std::size_t>> filter_redundant_per_layer(
    std::span<const TaskDelta> deltas, double epsilon);

// Role tags for bundle tensors. Tensor names are "<task_id>/<layer>".
inline constexpr std::string_view kRoleTsvU = "tsv_u";
inline constexpr std::string_view kRoleTsvS = "tsv_s";
inline constexpr std::string_view kRoleTsvV = "tsv_v";
inline constexpr std::string_view kRoleTsvBias = "tsv_bias";

mtsv::Container bundles_to_container(std::span<const TaskSubspaceBundle> bundles,
                                     const mtsv::Topology& topology);
std::vector<TaskSubspaceBundle> bundles_from_container(const mtsv::Container& c);

void write_bundles(std::span<const TaskSubspaceBundle> bundles, const mtsv::Topology& topology,
                   const std::filesystem::path& path);
std::vector<TaskSubspaceBundle> read_bundles(const std::filesystem::path& path);

bool is_bundle_container(const mtsv::Container& c);

}  // namespace mass
