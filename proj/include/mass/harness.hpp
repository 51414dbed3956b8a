#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mass/engine.hpp"
#include "mass/merge.hpp"
#include "mass/suite.hpp"

namespace mass {

enum class RouterCandidates { all, admitted_only };

std::string_view to_string(RouterCandidates c) noexcept;
RouterCandidates parse_router_candidates(std::string_view s);

struct HarnessConfig {
  MergeConfig merge;
  RouterConfig router;  // an empty layer means the suite's routing layer
  MergeMode mode = MergeMode::tsv;
  RouterCandidates candidates = RouterCandidates::all;
  std::size_t cache_capacity = 64;
  std::size_t batch_size = 16;  // mass-batched: consecutive same-task chunks of this size
};

inline const std::vector<std::string> kMethods{"mass",           "mass-batched", "tsv-m",    "task-arithmetic",
                                               "weight-average", "fine-tuned",   "zero-shot"};

struct EvalReport {
  std::string method;
  std::string suite_hash;
  std::vector<std::string> tasks;
  Vector per_task_accuracy;
  Vector fine_tuned_accuracy;
  double mean_accuracy = 0.0;
  double normalized_accuracy = 0.0;
  std::optional<double> routing_accuracy;  // routed methods only
  std::string config_json;

  std::string to_json() const;
  std::string to_text() const;
};

/// (1/T) sum_i merged_i / fine_tuned_i; throws when a fine-tuned accuracy is 0.
double normalized_accuracy(std::span<const std::pair<double, double>> pairs);

/// The artifacts every method needs, built once per suite and config.
struct Prepared {
  std::vector<TaskDelta> deltas;
  FixedMerge fixed;     // model heads: one per task, taken from the fine-tuned checkpoints
  Vector fine_tuned_accuracy;
  std::string suite_hash;
};

Prepared prepare(const TaskSuite& suite, const HarnessConfig& cfg);

EvalReport evaluate(const TaskSuite& suite, std::string_view method, const HarnessConfig& cfg);
EvalReport evaluate(const TaskSuite& suite, const Prepared& prep, std::string_view method, const HarnessConfig& cfg);

/// Engine over the suite's fixed merge, as the mass methods use it.
MassEngine make_engine(const TaskSuite& suite, const Prepared& prep, const HarnessConfig& cfg);

struct SweepRow {
  std::string layer;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation across tasks
  Vector per_task;
};

struct SweepTable {
  std::vector<std::string> tasks;
  std::vector<SweepRow> rows;

  std::string to_csv() const;
};

/// Per-layer routing accuracy: fraction of samples whose argmax weight is the
/// true task when routing at that layer. Empty `layers` means every layer.
SweepTable layer_sweep(const TaskSuite& suite, const Prepared& prep, std::span<const std::string> layers,
                       const HarnessConfig& cfg);

}  // namespace mass
