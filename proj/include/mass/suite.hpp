#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mass/checkpoint.hpp"

namespace mass {

struct Dataset {
  std::vector<Vector> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return inputs.size(); }
};

// A pretrained model, one fine-tuned model per task (each carrying a head named
// after its task) and a labelled dataset per task.
struct TaskSuite {
  Checkpoint pre;
  std::vector<Checkpoint> finetuned;
  std::vector<std::string> task_ids;
  std::vector<Dataset> data;
  std::string routing_layer;
  std::vector<MatrixD> planted;  // per task right basis at the routing layer; empty for loaded suites

  void validate() const;
  std::size_t tasks() const noexcept { return task_ids.size(); }
  /// FNV-1a 64 over the serialized checkpoints and the datasets, as hex.
  std::string hash() const;
};

struct SyntheticConfig {
  std::size_t tasks = 4;
  std::vector<std::size_t> widths{32, 32, 32, 32, 32};  // layer l maps widths[l] -> widths[l+1]
  std::size_t rank = 4;                                 // planted rank per task
  std::size_t classes = 4;
  std::size_t samples_per_task = 100;
  double noise = 0.1;    // input noise norm relative to the signal norm
  double overlap = 0.0;  // principal cosine between planted subspaces, in [0, 1)
  std::uint64_t seed = 0;
  std::size_t routing_layer = static_cast<std::size_t>(-1);  // default: layer count / 2
  double signal_scale = 10.0;  // expected norm of the clean routing-layer input
  double delta_scale = 1.0;    // planted singular values span [delta_scale, 2 delta_scale)
  double tail_scale = 0.0;     // dense full-rank component of every layer delta
  double bias_scale = 0.1;     // std of the bias deltas
  double min_margin = 0.1;     // clean samples need top-two logit gap >= min_margin * rms(logits)

  // Additional plant of a task's routing subspace at an earlier layer.
  struct ExtraPlant {
    std::size_t task = 0;
    std::size_t layer = 0;
    double strength = 1.0;
  };
  std::vector<ExtraPlant> extra_plants;

  void validate() const;
};

/// Deterministic in the config (including the seed).
TaskSuite generate_synthetic_suite(const SyntheticConfig& cfg);

/// Name of the l-th layer of a generated suite.
std::string synthetic_layer_name(std::size_t l);
std::string synthetic_task_id(std::size_t t);

// Datasets as JSON lines: {"task": id, "x": [...], "label": c}.
void write_datasets(const TaskSuite& suite, const std::filesystem::path& path);
std::vector<Dataset> read_datasets(const std::filesystem::path& path, const std::vector<std::string>& task_ids);

/// Writes pre.mtsv, <task>.mtsv per task and data.jsonl into `dir`.
void write_suite(const TaskSuite& suite, const std::filesystem::path& dir);

/// Task id of a fine-tuned checkpoint: meta "task_id", else the file stem.
std::string task_id_of(const Checkpoint& c, const std::filesystem::path& path);

TaskSuite load_suite(const std::filesystem::path& pre, const std::vector<std::filesystem::path>& tasks,
                     const std::filesystem::path& data, const std::string& routing_layer);

}  // namespace mass
