#include "mass/router.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mass/kernels.hpp"

namespace mass {

namespace {

constexpr double kOrthonormalTolerance = 1e-5;

}  // namespace

std::string_view to_string(SubspaceSource s) noexcept {
  return s == SubspaceSource::raw ? "raw" : "orthogonalized";
}

SubspaceSource parse_subspace_source(std::string_view s) {
  if (s == "raw") return SubspaceSource::raw;
  if (s == "orthogonalized") return SubspaceSource::orthogonalized;
  throw Error(Errc::invalid_argument, "router source must be 'raw' or 'orthogonalized', got '" + std::string(s) + "'");
}

void RouterConfig::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw Error(Errc::invalid_argument, "eta must lie in [0, 1]");
  if (top_k == 0) throw Error(Errc::invalid_argument, "top-k must be at least 1");
  if (!(temperature > 0.0)) throw Error(Errc::invalid_argument, "temperature must be positive");
}

std::string RoutingDecision::to_json() const {
  nlohmann::json j{{"layer", layer}, {"residuals", residuals}, {"weights", weights}, {"selected", selected}};
  bool identity = true;
  for (std::size_t i = 0; i < candidates.size(); ++i) identity = identity && candidates[i] == i;
  if (!identity) j["candidates"] = candidates;
  return j.dump();
}

std::vector<std::size_t> gate(std::span<const double> weights, double eta, std::size_t top_k) {
  if (weights.empty()) throw Error(Errc::empty_input, "gate over an empty weight vector");
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i : order) {
    if (out.size() == top_k) break;
    if (weights[i] >= eta) out.push_back(i);
  }
  if (out.empty()) out.push_back(order.front());
  return out;
}

ProjectionRouter::ProjectionRouter(std::span<const TaskSubspaceBundle> bundles, RouterConfig cfg,
                                   std::vector<std::size_t> candidates)
    : cfg_(std::move(cfg)), candidates_(std::move(candidates)) {
  cfg_.validate();
  if (bundles.empty()) throw Error(Errc::empty_input, "router needs at least one task bundle");
  if (candidates_.empty()) {
    candidates_.resize(bundles.size());
    std::iota(candidates_.begin(), candidates_.end(), std::size_t{0});
  }
  for (std::size_t idx : candidates_) {
    if (idx >= bundles.size()) throw Error(Errc::invalid_argument, "router candidate index out of range");
    const LayerFactors& f = bundles[idx].layer(cfg_.layer);
    if (subspaces_.empty()) input_dim_ = f.v.rows();
    if (f.v.rows() != input_dim_)
      throw Error(Errc::dimension_mismatch, "task subspaces at '" + cfg_.layer + "' have different dimensions");
    subspaces_.push_back(f.v.cast<double>());
  }
  if (cfg_.source == SubspaceSource::orthogonalized) {
    const MatrixD joint = orthogonalize(hconcat(subspaces_));
    std::size_t offset = 0;
    for (auto& s : subspaces_) {
      MatrixD block(s.rows(), s.cols());
      for (std::size_t r = 0; r < s.rows(); ++r)
        for (std::size_t c = 0; c < s.cols(); ++c) block(r, c) = joint(r, offset + c);
      offset += s.cols();
      s = std::move(block);
    }
  }
  for (std::size_t i = 0; i < subspaces_.size(); ++i) {
    const double err = orthonormality_error(subspaces_[i]);
    if (err > kOrthonormalTolerance) {
      std::ostringstream msg;
      msg << "subspace of task " << candidates_[i] << " at '" << cfg_.layer
          << "' is not orthonormal (error " << err << ")";
      throw Error(Errc::invalid_argument, msg.str());
    }
  }
}

Vector ProjectionRouter::residuals(std::span<const double> z) const {
  if (z.size() != input_dim_) {
    std::ostringstream msg;
    msg << "activation of length " << z.size() << " at layer '" << cfg_.layer << "' expects " << input_dim_;
    throw Error(Errc::dimension_mismatch, msg.str());
  }
  Vector r(subspaces_.size());
  for (std::size_t i = 0; i < subspaces_.size(); ++i) r[i] = kernels::projection_residual(z, subspaces_[i]);
  return r;
}

RoutingDecision ProjectionRouter::decide(Vector residuals) const {
  if (residuals.size() != candidates_.size())
    throw Error(Errc::dimension_mismatch, "residual vector does not match the candidate set");
  RoutingDecision d;
  d.weights = softmax_neg(residuals, cfg_.temperature);
  for (std::size_t local : gate(d.weights, cfg_.eta, cfg_.top_k)) d.selected.push_back(candidates_[local]);
  d.residuals = std::move(residuals);
  d.candidates = candidates_;
  d.layer = cfg_.layer;
  return d;
}

RoutingDecision ProjectionRouter::route(std::span<const double> z) const { return decide(residuals(z)); }

RoutingDecision ProjectionRouter::batched_route(std::span<const Vector> batch) const {
  if (batch.empty()) throw Error(Errc::empty_input, "batched routing of an empty batch");
  MatrixD z(batch.size(), input_dim_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].size() != input_dim_)
      throw Error(Errc::dimension_mismatch, "batch sample " + std::to_string(i) + " has the wrong dimension");
    std::copy(batch[i].begin(), batch[i].end(), z.row(i).begin());
  }
  Vector mean(subspaces_.size(), 0.0);
  for (std::size_t t = 0; t < subspaces_.size(); ++t) {
    const Vector per_sample = kernels::projection_residuals(z, subspaces_[t]);
    for (double r : per_sample) mean[t] += r;
    mean[t] /= static_cast<double>(batch.size());
  }
  return decide(std::move(mean));
}

Vector residuals(std::span<const double> z, std::span<const TaskSubspaceBundle> bundles, std::string_view layer) {
  RouterConfig cfg;
  cfg.layer = std::string(layer);
  return ProjectionRouter(bundles, cfg).residuals(z);
}

RoutingDecision route(std::span<const double> z, std::span<const TaskSubspaceBundle> bundles,
                      const RouterConfig& cfg) {
  return ProjectionRouter(bundles, cfg).route(z);
}

RoutingDecision batched_route(std::span<const Vector> batch, std::span<const TaskSubspaceBundle> bundles,
                              const RouterConfig& cfg) {
  return ProjectionRouter(bundles, cfg).batched_route(batch);
}

std::size_t nn_route(std::span<const double> z, std::span<const SupportSample> support) {
  if (support.empty()) throw Error(Errc::empty_input, "nearest-neighbour routing needs a support set");
  if (norm2(z) == 0.0) throw Error(Errc::invalid_argument, "nearest-neighbour query has zero norm");
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (support[i].z.size() != z.size())
      throw Error(Errc::dimension_mismatch, "support sample " + std::to_string(i) + " has the wrong dimension");
    if (norm2(support[i].z) == 0.0)
      throw Error(Errc::invalid_argument, "support sample " + std::to_string(i) + " has zero norm");
    const double sim = cosine_similarity(z, support[i].z);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return support[best].task;
}

}  // namespace mass
