#include "mass/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mass/kernels.hpp"
#include "mass/parallel.hpp"

namespace mass {

namespace {

void activate(Activation a, Vector& v) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::gelu:
      for (double& x : v) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
      break;
  }
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Vector head_logits(const Head& head, std::span<const double> z) {
  if (head.weights.cols() != z.size()) {
    std::ostringstream msg;
    msg << "head '" << head.name << "' expects a representation of length " << head.weights.cols() << ", got "
        << z.size();
    throw Error(Errc::dimension_mismatch, msg.str());
  }
  return kernels::affine(head.weights, head.bias, z);
}

ForwardTrace forward(const Checkpoint& model, std::span<const double> x, const std::set<std::string>& capture,
                     std::span<const std::size_t> heads) {
  if (model.layers.empty()) throw Error(Errc::invalid_argument, "model has no layers");
  if (x.size() != model.input_dim()) {
    std::ostringstream msg;
    msg << "input of length " << x.size() << " but the first layer expects " << model.input_dim();
    throw Error(Errc::dimension_mismatch, msg.str());
  }
  for (const auto& name : capture)
    if (!model.layer_index(name)) throw Error(Errc::unknown_layer, "no layer named '" + name + "'");

  ForwardTrace trace;
  Vector z(x.begin(), x.end());
  if (!finite(z)) throw Error(Errc::non_finite, "input contains a non-finite value");
  for (const Layer& layer : model.layers) {
    if (capture.contains(layer.name)) trace.inputs.emplace(layer.name, z);
    Vector next = kernels::affine(layer.weights, layer.bias, z);
    activate(layer.activation, next);
    if (!finite(next)) throw Error(Errc::non_finite, "non-finite activation after layer '" + layer.name + "'");
    z = std::move(next);
  }
  for (std::size_t h : heads) {
    if (h >= model.heads.size()) throw Error(Errc::invalid_argument, "head index out of range");
    trace.heads.push_back(h);
    trace.logits.push_back(head_logits(model.heads[h], z));
  }
  trace.representation = std::move(z);
  return trace;
}

std::string_view to_string(MergeMode m) noexcept { return m == MergeMode::tsv ? "tsv" : "plain-sum"; }

MergeMode parse_merge_mode(std::string_view s) {
  if (s == "tsv") return MergeMode::tsv;
  if (s == "plain-sum") return MergeMode::plain_sum;
  throw Error(Errc::invalid_argument, "merge mode must be 'tsv' or 'plain-sum', got '" + std::string(s) + "'");
}

MergedModel adaptive_merge(const Checkpoint& pre, std::span<const TaskSubspaceBundle> bundles,
                           std::span<const std::size_t> omega, double alpha, MergeMode mode) {
  if (omega.empty()) throw Error(Errc::empty_input, "adaptive merge over an empty task set");
  std::vector<std::size_t> members(omega.begin(), omega.end());
  std::sort(members.begin(), members.end());
  if (std::adjacent_find(members.begin(), members.end()) != members.end())
    throw Error(Errc::invalid_argument, "task set lists a task twice");
  if (members.back() >= bundles.size())
    throw Error(Errc::invalid_argument, "task index " + std::to_string(members.back()) + " is out of range");
  std::vector<TaskSubspaceBundle> chosen;
  chosen.reserve(members.size());
  for (std::size_t i : members) chosen.push_back(bundles[i]);
  MergedModel out = mode == MergeMode::tsv ? tsv_merge(pre, chosen, alpha) : subspace_sum_merge(pre, chosen, alpha);
  out.provenance.admitted = members;
  return out;
}

MassEngine::MassEngine(Checkpoint pre, Checkpoint merged, std::vector<TaskSubspaceBundle> bundles, EngineConfig cfg)
    : pre_(std::move(pre)),
      merged_(std::move(merged)),
      bundles_(std::move(bundles)),
      cfg_(std::move(cfg)),
      router_(bundles_, cfg_.router, cfg_.candidates) {
  pre_.validate();
  merged_.validate();
  require_same_topology(pre_, merged_);
  if (!pre_.layer_index(cfg_.router.layer))
    throw Error(Errc::unknown_layer, "routing layer '" + cfg_.router.layer + "' is not in the model");
  for (const auto& b : bundles_) head_of_task_.push_back(merged_.head_index(b.task_id));
}

Vector MassEngine::route_input(std::span<const double> x) const {
  ForwardTrace first = forward(merged_, x, {cfg_.router.layer});
  ++forward_passes_;
  return std::move(first.inputs.at(cfg_.router.layer));
}

std::shared_ptr<const Checkpoint> MassEngine::merged_for(std::vector<std::size_t> omega) const {
  std::sort(omega.begin(), omega.end());
  ++adaptive_merges_;
  auto compute = [&] {
    ++merge_computations_;
    return std::make_shared<const Checkpoint>(adaptive_merge(pre_, bundles_, omega, cfg_.alpha, cfg_.mode).weights);
  };
  if (cfg_.cache_capacity == 0) {
    if (merge_hook_) merge_hook_(omega, false);
    return compute();
  }

  std::promise<std::shared_ptr<const Checkpoint>> promise;
  CacheValue value;
  bool hit = false;
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(omega); it != cache_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      value = it->second.first;
      hit = true;
    } else {
      value = promise.get_future().share();
      lru_.push_front(omega);
      cache_.emplace(omega, std::make_pair(value, lru_.begin()));
      while (cache_.size() > cfg_.cache_capacity) {
        cache_.erase(lru_.back());
        lru_.pop_back();
      }
    }
  }
  if (merge_hook_) merge_hook_(omega, hit);
  if (hit) return value.get();

  try {
    promise.set_value(compute());
  } catch (...) {
    {
      std::lock_guard lock(cache_mutex_);
      if (auto it = cache_.find(omega); it != cache_.end()) {
        lru_.erase(it->second.second);
        cache_.erase(it);
      }
    }
    promise.set_exception(std::current_exception());
  }
  return value.get();
}

Prediction MassEngine::select(const Checkpoint& model, std::span<const double> x, RoutingDecision routing) const {
  std::vector<std::size_t> tasks = routing.selected;
  std::sort(tasks.begin(), tasks.end());
  for (std::size_t t : tasks)
    if (!head_of_task_[t]) throw Error(Errc::invalid_argument, "no head for task '" + bundles_[t].task_id + "'");

  ForwardTrace second = forward(model, x);
  ++forward_passes_;

  Prediction best;
  bool found = false;
  for (std::size_t t : tasks) {
    const Vector logits = head_logits(merged_.heads[*head_of_task_[t]], second.representation);
    ++head_evaluations_;
    if (head_hook_) head_hook_(t);
    for (std::size_t c = 0; c < logits.size(); ++c) {
      if (!found || logits[c] > best.logit) {
        best.task = t;
        best.cls = c;
        best.logit = logits[c];
        found = true;
      }
    }
  }
  if (!found) throw Error(Errc::invalid_argument, "selected heads have no classes");
  best.routing = std::move(routing);
  ++samples_;
  return best;
}

Prediction MassEngine::classify(std::span<const double> x) const {
  RoutingDecision routing = router_.route(route_input(x));
  auto model = merged_for(routing.selected);
  return select(*model, x, std::move(routing));
}

Prediction MassEngine::classify_with(std::span<const double> x, std::vector<std::size_t> omega) const {
  if (omega.empty()) throw Error(Errc::empty_input, "forced task set is empty");
  RoutingDecision routing = router_.route(route_input(x));
  routing.selected = std::move(omega);
  auto model = merged_for(routing.selected);
  return select(*model, x, std::move(routing));
}

std::vector<Prediction> MassEngine::classify_batched(std::span<const Vector> batch) const {
  if (batch.empty()) throw Error(Errc::empty_input, "classify_batched on an empty batch");
  std::vector<Vector> z(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { z[i] = route_input(batch[i]); });
  const RoutingDecision routing = router_.batched_route(z);
  auto model = merged_for(routing.selected);
  std::vector<Prediction> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { out[i] = select(*model, batch[i], routing); });
  return out;
}

std::vector<Prediction> MassEngine::classify_each(std::span<const Vector> samples) const {
  std::vector<Prediction> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { out[i] = classify(samples[i]); });
  return out;
}

EngineCounters MassEngine::counters() const {
  return {forward_passes_.load(), head_evaluations_.load(), adaptive_merges_.load(), merge_computations_.load(),
          samples_.load()};
}

void MassEngine::reset_counters() {
  forward_passes_ = 0;
  head_evaluations_ = 0;
  adaptive_merges_ = 0;
  merge_computations_ = 0;
  samples_ = 0;
}

}  // namespace mass
