#pragma once

#include <atomic>
#include <functional>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mass/checkpoint.hpp"
#include "mass/merge.hpp"
#include "mass/router.hpp"

namespace mass {

struct ForwardTrace {
  std::map<std::string, Vector> inputs;  // captured layer inputs, by layer name
  Vector representation;                 // output of the last layer
  std::vector<std::size_t> heads;        // indices into Checkpoint::heads
  std::vector<Vector> logits;            // aligned with `heads`
};

/// Runs x through every layer, capturing the inputs of the layers named in
/// `capture` and evaluating the listed heads on the final representation.
ForwardTrace forward(const Checkpoint& model, std::span<const double> x,
                     const std::set<std::string>& capture = {}, std::span<const std::size_t> heads = {});

Vector head_logits(const Head& head, std::span<const double> z);

enum class MergeMode { tsv, plain_sum };

std::string_view to_string(MergeMode m) noexcept;
MergeMode parse_merge_mode(std::string_view s);

/// Merge of the bundles in `omega` only: tsv_merge in "tsv" mode, the plain
/// sum of the truncated factors in "plain-sum" mode. Members are merged in
/// ascending index order whatever the order of `omega`.
MergedModel adaptive_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                           std::span<const std::size_t> omega, double alpha, MergeMode mode = MergeMode::tsv);

struct EngineConfig {
  RouterConfig router;
  double alpha = 1.0;
  MergeMode mode = MergeMode::tsv;
  std::size_t cache_capacity = 64;
  std::vector<std::size_t> candidates;  // router candidates; empty means all tasks
};

struct Prediction {
  std::size_t task = 0;  // bundle index
  std::size_t cls = 0;
  double logit = 0.0;
  RoutingDecision routing;
};

struct EngineCounters {
  std::size_t forward_passes = 0;
  std::size_t head_evaluations = 0;
  std::size_t adaptive_merges = 0;       // requests, cached or not
  std::size_t merge_computations = 0;    // cache misses
  std::size_t samples = 0;
};

/// Two-pass inference: route on the fixed merge, merge the selected subspaces
/// onto the pretrained weights, rerun, and pick the best logit over the heads
/// of the selected tasks. Safe to call concurrently.
class MassEngine {
 public:
  using MergeHook = std::function<void(const std::vector<std::size_t>& omega, bool cached)>;
  using HeadHook = std::function<void(std::size_t task)>;

  /// Task heads are taken from `merged` and matched to bundles by task id.
  MassEngine(Checkpoint pre, Checkpoint merged, std::vector<TaskSubspaceBundle> bundles, EngineConfig cfg);

  Prediction classify(std::span<const double> x) const;
  /// Classification with Omega forced, skipping the router.
  Prediction classify_with(std::span<const double> x, std::vector<std::size_t> omega) const;
  /// One batched route and one adaptive merge for the whole batch.
  std::vector<Prediction> classify_batched(std::span<const Vector> batch) const;
  /// classify() on every sample, parallel over samples.
  std::vector<Prediction> classify_each(std::span<const Vector> samples) const;

  /// The θ_pre + αΔ_ada checkpoint for `omega`, memoized.
  std::shared_ptr<const Checkpoint> merged_for(std::vector<std::size_t> omega) const;

  void on_adaptive_merge(MergeHook hook) { merge_hook_ = std::move(hook); }
  void on_head_evaluation(HeadHook hook) { head_hook_ = std::move(hook); }

  EngineCounters counters() const;
  void reset_counters();

  const EngineConfig& config() const noexcept { return cfg_; }
  const std::vector<TaskSubspaceBundle>& bundles() const noexcept { return bundles_; }
  const Checkpoint& pretrained() const noexcept { return pre_; }
  const Checkpoint& fixed_merge() const noexcept { return merged_; }
  const ProjectionRouter& router() const noexcept { return router_; }

 private:
  Vector route_input(std::span<const double> x) const;
  Prediction select(const Checkpoint& model, std::span<const double> x, RoutingDecision routing) const;

  using CacheValue = std::shared_future<std::shared_ptr<const Checkpoint>>;

  Checkpoint pre_;
  Checkpoint merged_;
  std::vector<TaskSubspaceBundle> bundles_;
  EngineConfig cfg_;
  ProjectionRouter router_;
  std::vector<std::optional<std::size_t>> head_of_task_;  // index into merged_.heads

  mutable std::mutex cache_mutex_;
  mutable std::list<std::vector<std::size_t>> lru_;  // most recent first
  mutable std::map<std::vector<std::size_t>, std::pair<CacheValue, std::list<std::vector<std::size_t>>::iterator>>
      cache_;

  mutable std::atomic<std::size_t> forward_passes_{0};
  mutable std::atomic<std::size_t> head_evaluations_{0};
  mutable std::atomic<std::size_t> adaptive_merges_{0};
  mutable std::atomic<std::size_t> merge_computations_{0};
  mutable std::atomic<std::size_t> samples_{0};

  MergeHook merge_hook_;
  HeadHook head_hook_;
};

}  // namespace mass
