#include "mass/subspace.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "mass/linalg.hpp"

namespace mass {

namespace {

std::vector<float> to_floats(std::span<const double> v) {
  std::vector<float> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return out;
}

Matrix column_of(std::span<const float> v) {
  return Matrix(v.size(), 1, std::vector<float>(v.begin(), v.end()));
}

const mtsv::Tensor& require(const mtsv::Container& c, const std::string& name, std::string_view role) {
  const auto* t = c.find(name, role);
  if (!t) throw Error(Errc::topology_mismatch, "bundle tensor '" + name + "' (" + std::string(role) + ") is missing");
  return *t;
}

}  // namespace

const LayerFactors& TaskSubspaceBundle::layer(std::string_view name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw Error(Errc::unknown_layer, "bundle '" + task_id + "' has no layer '" + std::string(name) + "'");
}

std::size_t default_rank(std::size_t m, std::size_t n, std::size_t tasks) {
  return std::max<std::size_t>(1, std::min(m, n) / std::max<std::size_t>(1, tasks));
}

std::vector<std::size_t> uniform_ranks(const TaskDelta& d, std::size_t k) {
  std::vector<std::size_t> out;
  for (const auto& l : d.layers) {
    const std::size_t full = std::min(l.weights.rows(), l.weights.cols());
    if (k == 0 || k > full) {
      std::ostringstream msg;
      msg << "rank " << k << " invalid for layer '" << l.name << "' with min(m, n) = " << full;
      throw Error(Errc::rank_too_large, msg.str());
    }
    out.push_back(k);
  }
  return out;
}

std::vector<std::size_t> default_ranks(const TaskDelta& d, std::size_t tasks) {
  std::vector<std::size_t> out;
  for (const auto& l : d.layers) out.push_back(default_rank(l.weights.rows(), l.weights.cols(), tasks));
  return out;
}

TaskSubspaceBundle decompose_task(const TaskDelta& d, std::span<const std::size_t> ranks) {
  if (ranks.size() != d.layers.size())
    throw Error(Errc::dimension_mismatch, "one rank per layer is required");
  TaskSubspaceBundle b{d.task_id, {}};
  b.layers.reserve(d.layers.size());
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    const LayerDelta& ld = d.layers[i];
    const ThinSvd full = thin_svd(ld.weights);
    if (ranks[i] == 0 || ranks[i] > full.rank()) {
      std::ostringstream msg;
      msg << "rank " << ranks[i] << " exceeds min(m, n) = " << full.rank() << " at layer '"
          << ld.name << "'";
      throw Error(Errc::rank_too_large, msg.str());
    }
    const ThinSvd t = truncate_svd(full, ranks[i]);
    b.layers.push_back({ld.name, t.u.cast<float>(), to_floats(t.s), t.v.cast<float>(), to_floats(ld.bias)});
  }
  return b;
}

std::vector<std::size_t> filter_redundant_vectors(std::span<const Vector> vectors, double epsilon) {
  if (vectors.empty()) throw Error(Errc::empty_input, "redundancy filter needs at least one task");
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw Error(Errc::invalid_argument, "epsilon must lie in (0, 1]");
  for (std::size_t i = 0; i < vectors.size(); ++i)
    if (norm2(vectors[i]) == 0.0)
      throw Error(Errc::invalid_argument,
                  "task " + std::to_string(i) + " has a zero delta; cosine similarity is undefined");

  std::vector<std::size_t> admitted;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j : admitted) best = std::max(best, cosine_similarity(vectors[i], vectors[j]));
    if (best < epsilon) admitted.push_back(i);
  }
  return admitted;
}

std::vector<std::size_t> filter_redundant(std::span<const TaskDelta> deltas, double epsilon) {
  std::vector<Vector> flat;
  flat.reserve(deltas.size());
  for (const auto& d : deltas) flat.push_back(flatten(d));
  return filter_redundant_vectors(flat, epsilon);
}

std::map<std::string, std::vector<std::size_t>> filter_redundant_per_layer(
    std::span<const TaskDelta> deltas, double epsilon) {
  if (deltas.empty()) throw Error(Errc::empty_input, "redundancy filter needs at least one task");
  std::map<std::string, std::vector<std::size_t>> out;
  for (const auto& layer : deltas.front().layers) {
    std::vector<Vector> flat;
    std::vector<std::size_t> owner;
    for (std::size_t t = 0; t < deltas.size(); ++t) {
      Vector v = flatten_layer(deltas[t], layer.name);
      if (norm2(v) == 0.0) continue;
      flat.push_back(std::move(v));
      owner.push_back(t);
    }
    std::vector<std::size_t> kept;
    if (!flat.empty())
      for (std::size_t local : filter_redundant_vectors(flat, epsilon)) kept.push_back(owner[local]);
    out.emplace(layer.name, std::move(kept));
  }
  return out;
}

mtsv::Container bundles_to_container(std::span<const TaskSubspaceBundle> bundles,
                                     const mtsv::Topology& topology) {
  mtsv::Container c;
  c.topology = topology;
  c.topology.heads.clear();
  c.meta["kind"] = "tsv_bundle";
  c.meta["task_count"] = std::to_string(bundles.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    if (b.task_id.empty() || b.task_id.find('/') != std::string::npos)
      throw Error(Errc::invalid_argument, "task id '" + b.task_id + "' must be non-empty and free of '/'");
    if (!ids.insert(b.task_id).second)
      throw Error(Errc::invalid_argument, "duplicate task id '" + b.task_id + "'");
    c.meta["task." + std::to_string(i)] = b.task_id;
    for (const auto& name : topology.layer_order) {
      const LayerFactors& f = b.layer(name);
      const std::string key = b.task_id + "/" + name;
      c.tensors.push_back({key, std::string(kRoleTsvU), f.u});
      c.tensors.push_back({key, std::string(kRoleTsvS), column_of(f.s)});
      c.tensors.push_back({key, std::string(kRoleTsvV), f.v});
      if (!f.bias.empty()) c.tensors.push_back({key, std::string(kRoleTsvBias), column_of(f.bias)});
    }
  }
  return c;
}

bool is_bundle_container(const mtsv::Container& c) {
  auto it = c.meta.find("kind");
  return it != c.meta.end() && it->second == "tsv_bundle";
}

std::vector<TaskSubspaceBundle> bundles_from_container(const mtsv::Container& c) {
  if (!is_bundle_container(c)) throw Error(Errc::topology_mismatch, "container is not a TSV bundle");
  std::size_t count = 0;
  try {
    count = std::stoul(c.meta.at("task_count"));
  } catch (const std::exception&) {
    throw Error(Errc::malformed_header, "bundle meta lacks a valid task_count");
  }
  std::vector<TaskSubspaceBundle> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto it = c.meta.find("task." + std::to_string(i));
    if (it == c.meta.end()) throw Error(Errc::malformed_header, "bundle meta lacks task." + std::to_string(i));
    TaskSubspaceBundle b{it->second, {}};
    for (const auto& name : c.topology.layer_order) {
      const std::string key = b.task_id + "/" + name;
      LayerFactors f{name, require(c, key, kRoleTsvU).value, require(c, key, kRoleTsvS).value.values(),
                     require(c, key, kRoleTsvV).value, {}};
      if (const auto* bias = c.find(key, kRoleTsvBias)) f.bias = bias->value.values();
      if (f.u.cols() != f.rank() || f.v.cols() != f.rank())
        throw Error(Errc::shape_mismatch, "bundle factors of '" + key + "' disagree on rank");
      if (!f.bias.empty() && f.bias.size() != f.u.rows())
        throw Error(Errc::shape_mismatch, "bundle bias of '" + key + "' has the wrong length");
      b.layers.push_back(std::move(f));
    }
    out.push_back(std::move(b));
  }
  return out;
}

void write_bundles(std::span<const TaskSubspaceBundle> bundles, const mtsv::Topology& topology,
                   const std::filesystem::path& path) {
  mtsv::write_file(bundles_to_container(bundles, topology), path);
}

std::vector<TaskSubspaceBundle> read_bundles(const std::filesystem::path& path) {
  return bundles_from_container(mtsv::read_file(path));
}

}  // namespace mass
