#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mass/matrix.hpp"
#include "mass/mtsv.hpp"

namespace mass {

enum class Activation { identity, relu, gelu };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view tag);

struct Layer {
  std::string name;
  Matrix weights;           // out x in
  std::vector<float> bias;  // length out, or empty when the layer has no bias
  Activation activation = Activation::identity;

  bool has_bias() const noexcept { return !bias.empty(); }
  bool operator==(const Layer&) const = default;
};

// Task classification head: logits = weights * z + bias.
struct Head {
  std::string name;
  Matrix weights;  // classes x d
  std::vector<float> bias;

  std::size_t classes() const noexcept { return weights.rows(); }
  bool operator==(const Head&) const = default;
};

// Layered dense model plus classification heads. Layer l maps
// cols(weights) -> rows(weights), and layer l+1 consumes layer l's output.
struct Checkpoint {
  std::vector<Layer> layers;
  std::vector<Head> heads;
  std::map<std::string, std::string> meta;

  // Throws Errc::topology_mismatch / shape_mismatch / non_finite.
  void validate() const;

  std::optional<std::size_t> layer_index(std::string_view name) const;
  std::optional<std::size_t> head_index(std::string_view name) const;
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;

  bool operator==(const Checkpoint&) const = default;
};

// Tensor role tags in the container.
inline constexpr std::string_view kRoleLayer = "layer";
inline constexpr std::string_view kRoleBias = "bias";
inline constexpr std::string_view kRoleHead = "head";
inline constexpr std::string_view kRoleHeadBias = "head_bias";

mtsv::Container to_container(const Checkpoint& c);
Checkpoint checkpoint_from_container(const mtsv::Container& c);

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Per-layer weight difference; biases are carried as vectors alongside.
struct LayerDelta {
  std::string name;
  MatrixD weights;
  Vector bias;  // empty when the layer has no bias

  bool operator==(const LayerDelta&) const = default;
};

struct TaskDelta {
  std::string task_id;
  std::vector<LayerDelta> layers;

  const LayerDelta& layer(std::string_view name) const;
  bool operator==(const TaskDelta&) const = default;
};

// ft - pre, layer by layer. Throws Errc::topology_mismatch when the two
// checkpoints do not share layer names, shapes and bias presence.
TaskDelta delta(const Checkpoint& ft, const Checkpoint& pre, std::string task_id);

// pre + alpha * d (single-task application of the additive merge).
Checkpoint apply_delta(const Checkpoint& pre, const TaskDelta& d, double alpha = 1.0);

// Row-major flattening of the weight deltas, layer by layer. Biases are not
// part of the flattened vector.
Vector flatten(const TaskDelta& d);
Vector flatten_layer(const TaskDelta& d, std::string_view layer);

void require_same_topology(const Checkpoint& a, const Checkpoint& b);

}  // namespace mass
