#include "mass/merge.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"
#include "mass/kernels.hpp"
#include "mass/linalg.hpp"
#include "mass/parallel.hpp"

namespace mass {

namespace {

struct LayerPart {
  MatrixD u;
  Vector s;
  MatrixD v;
};

void add_scaled(Layer& out, const MatrixD& update, double alpha) {
  auto w = out.weights.data();
  auto d = update.data();
  for (std::size_t k = 0; k < w.size(); ++k)
    w[k] = static_cast<float>(static_cast<double>(w[k]) + alpha * d[k]);
}

void add_bias_sum(Layer& out, const Vector& bias_sum, double alpha) {
  for (std::size_t k = 0; k < out.bias.size(); ++k)
    out.bias[k] = static_cast<float>(static_cast<double>(out.bias[k]) + alpha * bias_sum[k]);
}

void check_factors(const Layer& layer, const LayerFactors& f, const std::string& task) {
  if (f.u.rows() != layer.weights.rows() || f.v.rows() != layer.weights.cols())
    throw Error(Errc::topology_mismatch, "factors of task '" + task + "' at layer '" + layer.name +
                                             "' do not match the layer shape");
  if (f.bias.size() != layer.bias.size())
    throw Error(Errc::topology_mismatch, "bias delta of task '" + task + "' at layer '" + layer.name +
                                             "' has the wrong length");
}

// Collects the factors of the chosen bundles at one layer, dropping
// negligible singular triplets and enforcing the rank budget.
std::vector<LayerPart> gather_parts(const Layer& layer, std::span<const TaskSubspaceBundle> bundles,
                                    std::span<const std::size_t> members, bool strict_rank,
                                    std::vector<std::size_t>& ranks_out) {
  double largest = 0.0;
  for (std::size_t idx : members) {
    const LayerFactors& f = bundles[idx].layer(layer.name);
    check_factors(layer, f, bundles[idx].task_id);
    for (float s : f.s) largest = std::max(largest, static_cast<double>(s));
  }
  const double cutoff = kNegligibleSingularValue * largest;

  std::vector<std::size_t> kept(members.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const LayerFactors& f = bundles[members[i]].layer(layer.name);
    while (kept[i] < f.rank() && largest > 0.0 && static_cast<double>(f.s[kept[i]]) > cutoff) ++kept[i];
    total += kept[i];
  }
  const std::size_t budget = std::min(layer.weights.rows(), layer.weights.cols());
  if (total > budget) {
    if (strict_rank) {
      std::ostringstream msg;
      msg << "concatenated rank " << total << " exceeds min(m, n) = " << budget << " at layer '"
          << layer.name << "'";
      throw Error(Errc::rank_too_large, msg.str());
    }
    const std::size_t share = default_rank(layer.weights.rows(), layer.weights.cols(), members.size());
    for (auto& k : kept) k = std::min(k, share);
  }

  std::vector<LayerPart> parts;
  ranks_out.clear();
  for (std::size_t i = 0; i < members.size(); ++i) {
    ranks_out.push_back(kept[i]);
    if (kept[i] == 0) continue;
    const LayerFactors& f = bundles[members[i]].layer(layer.name);
    parts.push_back({f.u.left_columns(kept[i]).cast<double>(),
                     Vector(f.s.begin(), f.s.begin() + static_cast<std::ptrdiff_t>(kept[i])),
                     f.v.left_columns(kept[i]).cast<double>()});
  }
  return parts;
}

Vector bias_sum(const Layer& layer, std::span<const TaskSubspaceBundle> bundles,
                std::span<const std::size_t> members) {
  Vector sum(layer.bias.size(), 0.0);
  for (std::size_t idx : members) {
    const auto& b = bundles[idx].layer(layer.name).bias;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(b[k]);
  }
  return sum;
}

void merge_layer_tsv(Layer& out, std::span<const TaskSubspaceBundle> bundles,
                     std::span<const std::size_t> members, double alpha, bool strict_rank,
                     std::vector<std::size_t>& ranks_out) {
  const std::vector<LayerPart> parts = gather_parts(out, bundles, members, strict_rank, ranks_out);
  if (!parts.empty()) {
    std::vector<MatrixD> us, vs;
    Vector sigma;
    for (const auto& p : parts) {
      us.push_back(p.u);
      vs.push_back(p.v);
      sigma.insert(sigma.end(), p.s.begin(), p.s.end());
    }
    MatrixD u_perp, v_perp;
    try {
      u_perp = orthogonalize(hconcat(us));
      v_perp = orthogonalize(hconcat(vs));
    } catch (const Error& e) {
      throw Error(e.code(), "layer '" + out.name + "': " + e.detail());
    }
    add_scaled(out, kernels::scaled_outer(u_perp, sigma, v_perp), alpha);
  }
  add_bias_sum(out, bias_sum(out, bundles, members), alpha);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<std::string> ids_of(std::span<const TaskSubspaceBundle> bundles) {
  std::vector<std::string> ids;
  for (const auto& b : bundles) ids.push_back(b.task_id);
  return ids;
}

}  // namespace

std::string_view to_string(FilterScope s) noexcept {
  return s == FilterScope::global ? "global" : "per-layer";
}

FilterScope parse_filter_scope(std::string_view s) {
  if (s == "global") return FilterScope::global;
  if (s == "per-layer") return FilterScope::per_layer;
  throw Error(Errc::invalid_argument, "filter scope must be 'global' or 'per-layer', got '" + std::string(s) + "'");
}

std::string Provenance::to_json() const {
  nlohmann::json j{{"method", method},   {"alpha", alpha},       {"epsilon", epsilon},
                   {"task_ids", task_ids}, {"admitted", admitted}, {"ranks", ranks}};
  if (!admitted_per_layer.empty()) j["admitted_per_layer"] = admitted_per_layer;
  return j.dump(2);
}

MergedModel tsv_merge_layerwise(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                                const std::map<std::string, std::vector<std::size_t>>& members,
                                double alpha, bool strict_rank) {
  pre.validate();
  MergedModel out{pre, {}};
  out.provenance.method = "tsv-m";
  out.provenance.alpha = alpha;
  out.provenance.task_ids = ids_of(bundles);
  std::vector<std::vector<std::size_t>> ranks(pre.layers.size());
  parallel_for(pre.layers.size(), [&](std::size_t i) {
    Layer& layer = out.weights.layers[i];
    auto it = members.find(layer.name);
    if (it == members.end()) throw Error(Errc::unknown_layer, "no member set for layer '" + layer.name + "'");
    for (std::size_t idx : it->second)
      if (idx >= bundles.size()) throw Error(Errc::invalid_argument, "member index out of range");
    merge_layer_tsv(layer, bundles, it->second, alpha, strict_rank, ranks[i]);
  });
  for (std::size_t i = 0; i < pre.layers.size(); ++i) out.provenance.ranks[pre.layers[i].name] = ranks[i];
  return out;
}

MergedModel tsv_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles, double alpha,
                      bool strict_rank) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (const auto& l : pre.layers) members[l.name] = all_indices(bundles.size());
  MergedModel m = tsv_merge_layerwise(pre, bundles, members, alpha, strict_rank);
  m.provenance.admitted = all_indices(bundles.size());
  return m;
}

MergedModel subspace_sum_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                               double alpha) {
  pre.validate();
  MergedModel out{pre, {}};
  out.provenance.method = "plain-sum";
  out.provenance.alpha = alpha;
  out.provenance.task_ids = ids_of(bundles);
  out.provenance.admitted = all_indices(bundles.size());
  const auto members = all_indices(bundles.size());
  parallel_for(pre.layers.size(), [&](std::size_t i) {
    Layer& layer = out.weights.layers[i];
    MatrixD sum(layer.weights.rows(), layer.weights.cols());
    for (const auto& b : bundles) {
      const LayerFactors& f = b.layer(layer.name);
      check_factors(layer, f, b.task_id);
      const Vector s(f.s.begin(), f.s.end());
      const MatrixD term = kernels::scaled_outer(f.u.cast<double>(), s, f.v.cast<double>());
      for (std::size_t k = 0; k < sum.size(); ++k) sum.data()[k] += term.data()[k];
    }
    add_scaled(layer, sum, alpha);
    add_bias_sum(layer, bias_sum(layer, bundles, members), alpha);
  });
  for (const auto& l : pre.layers) {
    auto& r = out.provenance.ranks[l.name];
    for (const auto& b : bundles) r.push_back(b.layer(l.name).rank());
  }
  return out;
}

MergedModel task_arithmetic_merge(const Checkpoint& pre, std::span<const TaskDelta> deltas, double alpha) {
  pre.validate();
  MergedModel out{pre, {}};
  out.provenance.method = "task-arithmetic";
  out.provenance.alpha = alpha;
  for (const auto& d : deltas) out.provenance.task_ids.push_back(d.task_id);
  out.provenance.admitted = all_indices(deltas.size());
  for (auto& layer : out.weights.layers) {
    MatrixD sum(layer.weights.rows(), layer.weights.cols());
    Vector bsum(layer.bias.size(), 0.0);
    for (const auto& d : deltas) {
      const LayerDelta& ld = d.layer(layer.name);
      if (ld.weights.rows() != sum.rows() || ld.weights.cols() != sum.cols() || ld.bias.size() != bsum.size())
        throw Error(Errc::topology_mismatch, "delta of task '" + d.task_id + "' at layer '" + layer.name +
                                                 "' has the wrong shape");
      for (std::size_t k = 0; k < sum.size(); ++k) sum.data()[k] += ld.weights.data()[k];
      for (std::size_t k = 0; k < bsum.size(); ++k) bsum[k] += ld.bias[k];
    }
    add_scaled(layer, sum, alpha);
    add_bias_sum(layer, bsum, alpha);
  }
  return out;
}

MergedModel weight_average(std::span<const Checkpoint> checkpoints) {
  if (checkpoints.empty()) throw Error(Errc::empty_input, "weight averaging needs at least one checkpoint");
  const Checkpoint& first = checkpoints.front();
  first.validate();
  for (const auto& c : checkpoints.subspan(1)) require_same_topology(first, c);
  MergedModel out{first, {}};
  out.provenance.method = "weight-average";
  out.provenance.admitted = all_indices(checkpoints.size());
  const double n = static_cast<double>(checkpoints.size());
  for (std::size_t li = 0; li < first.layers.size(); ++li) {
    Layer& layer = out.weights.layers[li];
    Vector sum(layer.weights.size(), 0.0);
    Vector bsum(layer.bias.size(), 0.0);
    for (const auto& c : checkpoints) {
      auto w = c.layers[li].weights.data();
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += static_cast<double>(w[k]);
      for (std::size_t k = 0; k < bsum.size(); ++k) bsum[k] += static_cast<double>(c.layers[li].bias[k]);
    }
    for (std::size_t k = 0; k < sum.size(); ++k) layer.weights.data()[k] = static_cast<float>(sum[k] / n);
    for (std::size_t k = 0; k < bsum.size(); ++k) layer.bias[k] = static_cast<float>(bsum[k] / n);
  }
  out.weights.heads.clear();
  for (const auto& c : checkpoints)
    for (const auto& h : c.heads)
      if (!out.weights.head_index(h.name)) out.weights.heads.push_back(h);
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    auto it = checkpoints[i].meta.find("task_id");
    out.provenance.task_ids.push_back(it != checkpoints[i].meta.end() ? it->second : std::to_string(i));
  }
  return out;
}

std::vector<std::size_t> ranks_for(const TaskDelta& d, const MergeConfig& cfg, std::size_t task_count) {
  if (cfg.rank_k == 0) return default_ranks(d, task_count);
  std::vector<std::size_t> out;
  for (const auto& l : d.layers) {
    const std::size_t full = std::min(l.weights.rows(), l.weights.cols());
    if (cfg.rank_k > full) {
      if (cfg.strict_rank) {
        std::ostringstream msg;
        msg << "rank " << cfg.rank_k << " exceeds min(m, n) = " << full << " at layer '" << l.name << "'";
        throw Error(Errc::rank_too_large, msg.str());
      }
      out.push_back(full);
    } else {
      out.push_back(cfg.rank_k);
    }
  }
  return out;
}

FixedMerge fixed_merge(const Checkpoint& pre, std::span<const TaskDelta> deltas, const MergeConfig& cfg) {
  if (deltas.empty()) throw Error(Errc::empty_input, "fixed merge needs at least one task");
  FixedMerge out;
  out.bundles.resize(deltas.size());
  parallel_for(deltas.size(), [&](std::size_t i) {
    out.bundles[i] = decompose_task(deltas[i], ranks_for(deltas[i], cfg, deltas.size()));
  });

  if (cfg.filter_scope == FilterScope::global) {
    out.admitted = filter_redundant(deltas, cfg.epsilon);
    std::vector<TaskSubspaceBundle> chosen;
    for (std::size_t i : out.admitted) chosen.push_back(out.bundles[i]);
    out.model = tsv_merge(pre, chosen, cfg.alpha, cfg.strict_rank);
    out.model.provenance.task_ids.clear();
    for (const auto& d : deltas) out.model.provenance.task_ids.push_back(d.task_id);
    out.model.provenance.admitted = out.admitted;
  } else {
    const auto members = filter_redundant_per_layer(deltas, cfg.epsilon);
    out.model = tsv_merge_layerwise(pre, out.bundles, members, cfg.alpha, cfg.strict_rank);
    std::vector<bool> any(deltas.size(), false);
    for (const auto& [layer, idx] : members)
      for (std::size_t i : idx) any[i] = true;
    for (std::size_t i = 0; i < deltas.size(); ++i)
      if (any[i]) out.admitted.push_back(i);
    out.model.provenance.admitted = out.admitted;
    out.model.provenance.admitted_per_layer = members;
  }
  out.model.provenance.epsilon = cfg.epsilon;
  return out;
}

}  // namespace mass
