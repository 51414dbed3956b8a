#include "mass/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "mass/parallel.hpp"

namespace mass {

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double fraction(std::size_t hits, std::size_t total) {
  if (total == 0) throw Error(Errc::empty_input, "accuracy over an empty dataset");
  return static_cast<double>(hits) / static_cast<double>(total);
}

const Head& task_head(const TaskSuite& suite, std::size_t t) {
  return suite.finetuned[t].heads[*suite.finetuned[t].head_index(suite.task_ids[t])];
}

// Accuracy of `model` on task t, reading out t's own head.
double oracle_head_accuracy(const TaskSuite& suite, const Checkpoint& model, std::size_t t) {
  const Head& head = task_head(suite, t);
  const Dataset& ds = suite.data[t];
  std::vector<char> hit(ds.size(), 0);
  parallel_for(ds.size(), [&](std::size_t i) {
    const ForwardTrace tr = forward(model, ds.inputs[i]);
    hit[i] = argmax(head_logits(head, tr.representation)) == ds.labels[i];
  });
  return fraction(static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), ds.size());
}

double zero_shot_accuracy(const TaskSuite& suite, std::size_t t) {
  const Dataset& ds = suite.data[t];
  std::vector<char> hit(ds.size(), 0);
  parallel_for(ds.size(), [&](std::size_t i) {
    const ForwardTrace tr = forward(suite.pre, ds.inputs[i]);
    std::size_t best_task = 0;
    std::size_t best_class = 0;
    double best = 0.0;
    bool found = false;
    for (std::size_t h = 0; h < suite.tasks(); ++h) {
      const Vector logits = head_logits(task_head(suite, h), tr.representation);
      for (std::size_t c = 0; c < logits.size(); ++c)
        if (!found || logits[c] > best) {
          best = logits[c];
          best_task = h;
          best_class = c;
          found = true;
        }
    }
    hit[i] = best_task == t && best_class == ds.labels[i];
  });
  return fraction(static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), ds.size());
}

std::string resolved_layer(const TaskSuite& suite, const HarnessConfig& cfg) {
  return cfg.router.layer.empty() ? suite.routing_layer : cfg.router.layer;
}

std::string config_echo(const TaskSuite& suite, const HarnessConfig& cfg) {
  nlohmann::json j{
      {"alpha", cfg.merge.alpha},
      {"epsilon", cfg.merge.epsilon},
      {"rank", cfg.merge.rank_k},
      {"filter_scope", to_string(cfg.merge.filter_scope)},
      {"eta", cfg.router.eta},
      {"top_k", cfg.router.top_k},
      {"temperature", cfg.router.temperature},
      {"layer", resolved_layer(suite, cfg)},
      {"router_source", to_string(cfg.router.source)},
      {"router_candidates", to_string(cfg.candidates)},
      {"merge_mode", to_string(cfg.mode)},
      {"batch_size", cfg.batch_size},
  };
  return j.dump();
}

}  // namespace

std::string_view to_string(RouterCandidates c) noexcept {
  return c == RouterCandidates::all ? "all" : "admitted-only";
}

RouterCandidates parse_router_candidates(std::string_view s) {
  if (s == "all") return RouterCandidates::all;
  if (s == "admitted-only") return RouterCandidates::admitted_only;
  throw Error(Errc::invalid_argument, "router candidates must be 'all' or 'admitted-only', got '" + std::string(s) + "'");
}

double normalized_accuracy(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw Error(Errc::empty_input, "normalized accuracy over no tasks");
  double sum = 0.0;
  for (const auto& [merged, ft] : pairs) {
    if (!(ft > 0.0)) throw Error(Errc::invalid_argument, "fine-tuned accuracy is zero; normalized accuracy undefined");
    sum += merged / ft;
  }
  return sum / static_cast<double>(pairs.size());
}

std::string EvalReport::to_json() const {
  nlohmann::json j{
      {"report_version", 1},
      {"method", method},
      {"suite_hash", suite_hash},
      {"tasks", tasks},
      {"per_task_accuracy", per_task_accuracy},
      {"fine_tuned_accuracy", fine_tuned_accuracy},
      {"mean_accuracy", mean_accuracy},
      {"normalized_accuracy", normalized_accuracy},
      {"routing_accuracy", routing_accuracy ? nlohmann::json(*routing_accuracy) : nlohmann::json(nullptr)},
      {"config", nlohmann::json::parse(config_json)},
  };
  return j.dump();
}

std::string EvalReport::to_text() const {
  std::size_t width = 4;
  for (const auto& t : tasks) width = std::max(width, t.size());
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "method: " << method << "  suite: " << suite_hash << '\n';
  out << std::left << std::setw(static_cast<int>(width)) << "task" << "  accuracy  fine-tuned\n";
  for (std::size_t t = 0; t < tasks.size(); ++t)
    out << std::left << std::setw(static_cast<int>(width)) << tasks[t] << "  " << std::right << std::setw(8)
        << per_task_accuracy[t] << "  " << std::setw(10) << fine_tuned_accuracy[t] << '\n';
  out << "mean accuracy:       " << mean_accuracy << '\n';
  out << "normalized accuracy: " << normalized_accuracy << '\n';
  if (routing_accuracy) out << "routing accuracy:    " << *routing_accuracy << '\n';
  return out.str();
}

Prepared prepare(const TaskSuite& suite, const HarnessConfig& cfg) {
  suite.validate();
  Prepared prep;
  for (std::size_t t = 0; t < suite.tasks(); ++t)
    prep.deltas.push_back(delta(suite.finetuned[t], suite.pre, suite.task_ids[t]));
  prep.fixed = fixed_merge(suite.pre, prep.deltas, cfg.merge);
  prep.fixed.model.weights.heads.clear();
  for (std::size_t t = 0; t < suite.tasks(); ++t) prep.fixed.model.weights.heads.push_back(task_head(suite, t));
  for (std::size_t t = 0; t < suite.tasks(); ++t)
    prep.fine_tuned_accuracy.push_back(oracle_head_accuracy(suite, suite.finetuned[t], t));
  prep.suite_hash = suite.hash();
  return prep;
}

MassEngine make_engine(const TaskSuite& suite, const Prepared& prep, const HarnessConfig& cfg) {
  EngineConfig ec;
  ec.router = cfg.router;
  ec.router.layer = resolved_layer(suite, cfg);
  ec.alpha = cfg.merge.alpha;
  ec.mode = cfg.mode;
  ec.cache_capacity = cfg.cache_capacity;
  if (cfg.candidates == RouterCandidates::admitted_only) ec.candidates = prep.fixed.admitted;
  return MassEngine(suite.pre, prep.fixed.model.weights, prep.fixed.bundles, ec);
}

EvalReport evaluate(const TaskSuite& suite, std::string_view method, const HarnessConfig& cfg) {
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end())
    throw Error(Errc::unknown_method, "unknown method '" + std::string(method) + "'");
  return evaluate(suite, prepare(suite, cfg), method, cfg);
}

EvalReport evaluate(const TaskSuite& suite, const Prepared& prep, std::string_view method, const HarnessConfig& cfg) {
  const std::size_t T = suite.tasks();
  EvalReport rep;
  rep.method = std::string(method);
  rep.suite_hash = prep.suite_hash;
  rep.tasks = suite.task_ids;
  rep.fine_tuned_accuracy = prep.fine_tuned_accuracy;
  rep.config_json = config_echo(suite, cfg);

  if (method == "fine-tuned") {
    rep.per_task_accuracy = prep.fine_tuned_accuracy;
  } else if (method == "zero-shot") {
    for (std::size_t t = 0; t < T; ++t) rep.per_task_accuracy.push_back(zero_shot_accuracy(suite, t));
  } else if (method == "tsv-m" || method == "task-arithmetic" || method == "weight-average") {
    Checkpoint model;
    if (method == "tsv-m") {
      model = prep.fixed.model.weights;
    } else if (method == "task-arithmetic") {
      model = task_arithmetic_merge(suite.pre, prep.deltas, cfg.merge.alpha).weights;
    } else {
      model = weight_average(suite.finetuned).weights;
    }
    for (std::size_t t = 0; t < T; ++t) rep.per_task_accuracy.push_back(oracle_head_accuracy(suite, model, t));
  } else if (method == "mass" || method == "mass-batched") {
    const MassEngine engine = make_engine(suite, prep, cfg);
    std::size_t routed = 0;
    std::size_t total = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const Dataset& ds = suite.data[t];
      std::vector<Prediction> preds;
      if (method == "mass") {
        preds = engine.classify_each(ds.inputs);
      } else {
        if (cfg.batch_size == 0) throw Error(Errc::invalid_argument, "batch size must be positive");
        for (std::size_t start = 0; start < ds.size(); start += cfg.batch_size) {
          const std::size_t end = std::min(ds.size(), start + cfg.batch_size);
          auto chunk = engine.classify_batched(std::span(ds.inputs).subspan(start, end - start));
          preds.insert(preds.end(), chunk.begin(), chunk.end());
        }
      }
      std::size_t hits = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& sel = preds[i].routing.selected;
        routed += std::find(sel.begin(), sel.end(), t) != sel.end();
        hits += preds[i].task == t && preds[i].cls == ds.labels[i];
      }
      total += ds.size();
      rep.per_task_accuracy.push_back(fraction(hits, ds.size()));
    }
    rep.routing_accuracy = fraction(routed, total);
  } else {
    throw Error(Errc::unknown_method, "unknown method '" + std::string(method) + "'");
  }

  std::vector<std::pair<double, double>> pairs;
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    pairs.emplace_back(rep.per_task_accuracy[t], rep.fine_tuned_accuracy[t]);
    sum += rep.per_task_accuracy[t];
  }
  rep.mean_accuracy = sum / static_cast<double>(T);
  rep.normalized_accuracy = normalized_accuracy(pairs);
  return rep;
}

std::string SweepTable::to_csv() const {
  std::ostringstream out;
  out << "layer,mean_acc,std_acc";
  for (std::size_t t = 0; t < tasks.size(); ++t) out << ",task_" << (t + 1);
  out << '\n' << std::fixed << std::setprecision(6);
  for (const auto& row : rows) {
    out << row.layer << ',' << row.mean << ',' << row.stddev;
    for (double v : row.per_task) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

SweepTable layer_sweep(const TaskSuite& suite, const Prepared& prep, std::span<const std::string> layers,
                       const HarnessConfig& cfg) {
  std::vector<std::string> names(layers.begin(), layers.end());
  if (names.empty())
    for (const auto& l : suite.pre.layers) names.push_back(l.name);
  for (const auto& n : names)
    if (!suite.pre.layer_index(n)) throw Error(Errc::unknown_layer, "no layer named '" + n + "'");

  const std::set<std::string> capture(names.begin(), names.end());
  const Checkpoint& merged = prep.fixed.model.weights;
  // First-pass activations, shared by every layer's router.
  std::vector<std::vector<std::map<std::string, Vector>>> acts(suite.tasks());
  for (std::size_t t = 0; t < suite.tasks(); ++t) {
    const Dataset& ds = suite.data[t];
    acts[t].resize(ds.size());
    parallel_for(ds.size(), [&](std::size_t i) { acts[t][i] = forward(merged, ds.inputs[i], capture).inputs; });
  }

  SweepTable table;
  table.tasks = suite.task_ids;
  for (const auto& name : names) {
    RouterConfig rc = cfg.router;
    rc.layer = name;
    std::vector<std::size_t> candidates;
    if (cfg.candidates == RouterCandidates::admitted_only) candidates = prep.fixed.admitted;
    const ProjectionRouter router(prep.fixed.bundles, rc, candidates);
    SweepRow row;
    row.layer = name;
    for (std::size_t t = 0; t < suite.tasks(); ++t) {
      std::size_t hits = 0;
      for (const auto& a : acts[t]) {
        const RoutingDecision d = router.route(a.at(name));
        hits += d.candidates[argmax(d.weights)] == t;
      }
      row.per_task.push_back(fraction(hits, acts[t].size()));
    }
    for (double v : row.per_task) row.mean += v;
    row.mean /= static_cast<double>(row.per_task.size());
    for (double v : row.per_task) row.stddev += (v - row.mean) * (v - row.mean);
    row.stddev = std::sqrt(row.stddev / static_cast<double>(row.per_task.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mass
