#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mass/engine.hpp"
#include "mass/harness.hpp"
#include "mass/kernels.hpp"
#include "mass/merge.hpp"
#include "mass/subspace.hpp"
#include "mass/suite.hpp"

namespace mass::cli {

namespace fs = std::filesystem;

namespace {

struct MergeArgs {
  MergeConfig cfg;
  std::string scope = "global";

  void add(CLI::App& app) {
    app.add_option("--alpha", cfg.alpha, "Scaling coefficient of the merged update")->capture_default_str();
    app.add_option("--epsilon", cfg.epsilon, "Redundancy threshold on delta cosine similarity")->capture_default_str();
    app.add_option("--rank", cfg.rank_k, "Per-task truncation rank; 0 means min(m, n) / T per layer")
        ->capture_default_str();
    app.add_option("--filter-scope", scope, "Redundancy scan over the whole model or per layer")
        ->check(CLI::IsMember({"global", "per-layer"}))
        ->capture_default_str();
    app.add_flag("--strict", cfg.strict_rank, "Fail when concatenated ranks exceed min(m, n)");
  }

  MergeConfig resolve() const {
    MergeConfig out = cfg;
    out.filter_scope = parse_filter_scope(scope);
    return out;
  }
};

struct RouterArgs {
  RouterConfig cfg;
  std::string layer;
  std::string source = "raw";
  std::string candidates = "all";
  std::string mode = "tsv";
  std::size_t cache = 64;

  void add(CLI::App& app) {
    app.add_option("--eta", cfg.eta, "Gate threshold on the routing weights")->capture_default_str();
    app.add_option("--topk", cfg.top_k, "Maximum number of selected tasks")->capture_default_str();
    app.add_option("--temperature", cfg.temperature, "Softmax temperature over negative residuals")
        ->capture_default_str();
    app.add_option("--layer", layer, "Routing layer, by name or index (default: middle layer)");
    app.add_option("--router-source", source, "Project onto raw task subspaces or their orthogonalized blocks")
        ->check(CLI::IsMember({"raw", "orthogonalized"}))
        ->capture_default_str();
    app.add_option("--router-candidates", candidates, "Route over all tasks or only the admitted ones")
        ->check(CLI::IsMember({"all", "admitted-only"}))
        ->capture_default_str();
    app.add_option("--mode", mode, "Adaptive merge: tsv or plain-sum")
        ->check(CLI::IsMember({"tsv", "plain-sum"}))
        ->capture_default_str();
    app.add_option("--cache", cache, "Adaptive merge cache capacity (0 disables it)")->capture_default_str();
  }
};

struct SuiteArgs {
  std::string kind = "synthetic";
  SyntheticConfig syn;
  std::size_t routing_layer = static_cast<std::size_t>(-1);
  std::string pre;
  std::vector<std::string> tasks;
  std::string data;

  void add(CLI::App& app, bool allow_files) {
    if (allow_files) {
      app.add_option("--suite", kind, "synthetic, or files (with --pre, --tasks, --data)")
          ->check(CLI::IsMember({"synthetic", "files"}))
          ->capture_default_str();
      app.add_option("--pre", pre, "Pretrained checkpoint (files suite)");
      app.add_option("--tasks", tasks, "Fine-tuned checkpoints (files suite)");
      app.add_option("--data", data, "Labelled samples as JSON lines (files suite)");
    }
    app.add_option("--seed", syn.seed, "Suite seed")->capture_default_str();
    app.add_option("--num-tasks", syn.tasks, "Number of tasks")->capture_default_str();
    app.add_option("--widths", syn.widths, "Layer widths, input first")->delimiter(',')->capture_default_str();
    app.add_option("--suite-rank", syn.rank, "Planted rank per task")->capture_default_str();
    app.add_option("--classes", syn.classes, "Classes per task")->capture_default_str();
    app.add_option("--samples", syn.samples_per_task, "Samples per task")->capture_default_str();
    app.add_option("--noise", syn.noise, "Input noise relative to the signal norm")->capture_default_str();
    app.add_option("--overlap", syn.overlap, "Principal cosine between planted subspaces")->capture_default_str();
    app.add_option("--routing-layer", routing_layer, "Index of the planted layer (default: middle layer)");
    app.add_option("--signal-scale", syn.signal_scale, "Norm of the clean routing-layer input")
        ->capture_default_str();
    app.add_option("--tail-scale", syn.tail_scale, "Scale of the dense part of each delta")->capture_default_str();
    app.add_option("--bias-scale", syn.bias_scale, "Std of the bias deltas")->capture_default_str();
    app.add_option("--min-margin", syn.min_margin, "Minimum relative logit margin of clean samples")
        ->capture_default_str();
  }

  TaskSuite build(const std::string& layer) const {
    if (kind == "files" || !pre.empty()) {
      if (pre.empty() || tasks.empty() || data.empty())
        throw Error(Errc::invalid_argument, "a files suite needs --pre, --tasks and --data");
      std::vector<fs::path> paths(tasks.begin(), tasks.end());
      return load_suite(pre, paths, data, layer);
    }
    SyntheticConfig cfg = syn;
    cfg.routing_layer = routing_layer;
    return generate_synthetic_suite(cfg);
  }
};

void add_threads(CLI::App& app, int& threads) {
  app.add_option("--threads", threads, "Worker threads (default: available parallelism)");
}

void add_config(CLI::App& app, std::string& path) {
  app.add_option("--config", path, "JSON object of option values; explicit flags take precedence");
}

// Fills options that were not given on the command line from a JSON object
// whose keys are long option names without the leading dashes.
void apply_config(CLI::App& app, const std::string& path) {
  if (path.empty()) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(mtsv::read_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_header, "config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::malformed_header, "config '" + path + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config")
      throw Error(Errc::invalid_argument, "config '" + path + "': unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    auto text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(text(v));
    } else {
      opt->add_result(text(value));
    }
    opt->run_callback();
  }
}

void set_threads(int threads) {
  if (threads > 0) kernels::set_threads(threads);
}

std::string resolve_layer(const Checkpoint& model, const std::string& token) {
  if (token.empty()) return model.layers.at(model.layers.size() / 2).name;
  if (model.layer_index(token)) return token;
  if (std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const std::size_t idx = std::stoul(token);
    if (idx < model.layers.size()) return model.layers[idx].name;
  }
  throw Error(Errc::unknown_layer, "no layer '" + token + "' (model has " + std::to_string(model.layers.size()) +
                                       " layers)");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += sep;
    out += v[i];
  }
  return out;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    mtsv::write_bytes(path, text);
  }
}

HarnessConfig harness_config(const MergeArgs& m, const RouterArgs& r, std::size_t batch_size) {
  HarnessConfig hc;
  hc.merge = m.resolve();
  hc.router = r.cfg;
  hc.router.layer = r.layer;
  hc.router.source = parse_subspace_source(r.source);
  hc.candidates = parse_router_candidates(r.candidates);
  hc.mode = parse_merge_mode(r.mode);
  hc.cache_capacity = r.cache;
  hc.batch_size = batch_size;
  return hc;
}

// ---- merge ----------------------------------------------------------------

struct MergeCmd {
  std::string pre;
  std::vector<std::string> tasks;
  std::string out;
  MergeArgs merge;
  int threads = 0;
  std::string config;

  void add(CLI::App& app) {
    app.add_option("--pre", pre, "Pretrained checkpoint")->required();
    app.add_option("--tasks", tasks, "Fine-tuned checkpoints")->required();
    app.add_option("--out", out, "Merged checkpoint; bundles and provenance are written beside it")->required();
    merge.add(app);
    add_threads(app, threads);
    add_config(app, config);
  }

  int run(std::ostream& os, std::ostream&) const {
    const Checkpoint p = read_checkpoint(pre);
    std::vector<Checkpoint> fts;
    std::vector<std::string> ids;
    std::vector<TaskDelta> deltas;
    for (const auto& path : tasks) {
      Checkpoint ft = read_checkpoint(path);
      const std::string base = task_id_of(ft, path);
      std::string id = base;
      for (int n = 2; std::find(ids.begin(), ids.end(), id) != ids.end(); ++n) id = base + "~" + std::to_string(n);
      deltas.push_back(delta(ft, p, id));
      ids.push_back(id);
      fts.push_back(std::move(ft));
    }
    const MergeConfig cfg = merge.resolve();
    FixedMerge fixed = fixed_merge(p, deltas, cfg);

    Checkpoint merged = fixed.model.weights;
    merged.heads.clear();
    for (std::size_t t = 0; t < fts.size(); ++t) {
      const std::string base = task_id_of(fts[t], tasks[t]);
      std::optional<std::size_t> h = fts[t].head_index(base);
      if (!h && fts[t].heads.size() == 1) h = 0;
      if (!h) continue;
      Head head = fts[t].heads[*h];
      head.name = ids[t];
      merged.heads.push_back(std::move(head));
    }
    std::vector<std::string> admitted;
    for (std::size_t i : fixed.admitted) admitted.push_back(ids[i]);
    merged.meta["method"] = "tsv-m";
    merged.meta["task_ids"] = join(ids, ",");
    merged.meta["admitted"] = join(admitted, ",");

    const fs::path out_path(out);
    const fs::path stem = out_path.parent_path() / out_path.stem();
    const fs::path bundle_path = stem.string() + ".bundles.mtsv";
    const fs::path prov_path = stem.string() + ".provenance.json";
    write_checkpoint(merged, out_path);
    write_bundles(fixed.bundles, to_container(p).topology, bundle_path);
    mtsv::write_bytes(prov_path, fixed.model.provenance.to_json() + "\n");

    os << "admitted (" << admitted.size() << " of " << ids.size() << "): " << join(admitted, " ") << '\n';
    os << "ranks:\n";
    for (const auto& layer : p.layers) {
      os << "  " << layer.name << ':';
      const auto& r = fixed.model.provenance.ranks.at(layer.name);
      const auto members = cfg.filter_scope == FilterScope::global
                               ? fixed.admitted
                               : fixed.model.provenance.admitted_per_layer.at(layer.name);
      for (std::size_t i = 0; i < r.size() && i < members.size(); ++i) os << ' ' << ids[members[i]] << '=' << r[i];
      os << '\n';
    }
    os << "wrote " << out_path.string() << ", " << bundle_path.string() << ", " << prov_path.string() << '\n';
    return 0;
  }
};

// ---- infer ----------------------------------------------------------------

struct InferCmd {
  std::string pre;
  std::string merged;
  std::string bundles;
  std::string input;
  std::string out;
  double alpha = 1.0;
  RouterArgs router;
  bool batched = false;
  std::size_t batch_size = 0;
  int threads = 0;
  std::string config;

  void add(CLI::App& app) {
    app.add_option("--pre", pre, "Pretrained checkpoint")->required();
    app.add_option("--merged", merged, "Fixed-merge checkpoint with task heads")->required();
    app.add_option("--bundles", bundles, "Task subspace bundles (default: beside --merged)");
    app.add_option("--input", input, "JSON lines of {\"id\": ..., \"x\": [...]}")->required();
    app.add_option("--out", out, "Prediction JSON lines (default: standard output)");
    app.add_option("--alpha", alpha, "Scaling coefficient of the adaptive merge")->capture_default_str();
    router.add(app);
    app.add_flag("--batched", batched, "Route and merge once per batch");
    app.add_option("--batch-size", batch_size, "Samples per batch with --batched (0: the whole file)")
        ->capture_default_str();
    add_threads(app, threads);
    add_config(app, config);
  }

  int run(std::ostream& os, std::ostream& es) const {
    Checkpoint p = read_checkpoint(pre);
    Checkpoint m = read_checkpoint(merged);
    fs::path bpath = bundles;
    if (bpath.empty()) {
      const fs::path mp(merged);
      bpath = (mp.parent_path() / mp.stem()).string() + ".bundles.mtsv";
    }
    std::vector<TaskSubspaceBundle> b = read_bundles(bpath);

    EngineConfig ec;
    ec.router = router.cfg;
    ec.router.layer = resolve_layer(p, router.layer);
    ec.router.source = parse_subspace_source(router.source);
    ec.alpha = alpha;
    ec.mode = parse_merge_mode(router.mode);
    ec.cache_capacity = router.cache;
    if (parse_router_candidates(router.candidates) == RouterCandidates::admitted_only) {
      auto it = m.meta.find("admitted");
      if (it == m.meta.end()) throw Error(Errc::invalid_argument, "merged checkpoint does not record an admitted set");
      for (const auto& id : split(it->second, ',')) {
        auto pos = std::find_if(b.begin(), b.end(), [&](const auto& x) { return x.task_id == id; });
        if (pos == b.end()) throw Error(Errc::invalid_argument, "admitted task '" + id + "' has no bundle");
        ec.candidates.push_back(static_cast<std::size_t>(pos - b.begin()));
      }
    }
    const std::size_t in_dim = p.input_dim();
    MassEngine engine(std::move(p), std::move(m), std::move(b), ec);
    std::mutex log_mutex;
    engine.on_adaptive_merge([&](const std::vector<std::size_t>& omega, bool cached) {
      std::vector<std::string> ids;
      for (std::size_t i : omega) ids.push_back(engine.bundles()[i].task_id);
      nlohmann::json j{{"event", "adaptive_merge"}, {"selected", ids}, {"cached", cached}};
      std::lock_guard lock(log_mutex);
      es << j.dump() << '\n';
    });

    std::vector<std::string> ids;
    std::vector<Vector> xs;
    std::istringstream in(mtsv::read_bytes(input));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto& id = j.at("id");
        ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
        xs.push_back(j.at("x").get<Vector>());
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::malformed_header, input + ":" + std::to_string(line_no) + ": " + e.what());
      }
      if (xs.back().size() != in_dim) {
        std::ostringstream msg;
        msg << "sample '" << ids.back() << "' has length " << xs.back().size() << ", the model expects " << in_dim;
        throw Error(Errc::dimension_mismatch, msg.str());
      }
    }
    if (xs.empty()) throw Error(Errc::empty_input, "no samples in '" + input + "'");

    std::vector<Prediction> preds;
    if (batched) {
      const std::size_t size = batch_size == 0 ? xs.size() : batch_size;
      for (std::size_t start = 0; start < xs.size(); start += size) {
        const std::size_t end = std::min(xs.size(), start + size);
        auto chunk = engine.classify_batched(std::span(xs).subspan(start, end - start));
        preds.insert(preds.end(), chunk.begin(), chunk.end());
      }
    } else {
      preds = engine.classify_each(xs);
    }

    std::ostringstream data;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const Prediction& pr = preds[i];
      std::vector<std::string> selected;
      for (std::size_t t : pr.routing.selected) selected.push_back(engine.bundles()[t].task_id);
      nlohmann::json weights = nlohmann::json::object();
      for (std::size_t c = 0; c < pr.routing.candidates.size(); ++c)
        weights[engine.bundles()[pr.routing.candidates[c]].task_id] = pr.routing.weights[c];
      nlohmann::json j{{"input_id", ids[i]},
                       {"selected_tasks", selected},
                       {"task_weights", weights},
                       {"predicted_task", engine.bundles()[pr.task].task_id},
                       {"predicted_class", pr.cls},
                       {"logit", pr.logit}};
      data << j.dump() << '\n';
    }
    emit(out, data.str(), os);
    return 0;
  }
};

// ---- eval / sweep ---------------------------------------------------------

struct EvalCmd {
  SuiteArgs suite;
  MergeArgs merge;
  RouterArgs router;
  std::string methods = "mass";
  std::string format = "json";
  std::size_t batch_size = 16;
  std::string out;
  int threads = 0;
  std::string config;

  void add(CLI::App& app) {
    suite.add(app, true);
    merge.add(app);
    router.add(app);
    app.add_option("--methods", methods, "Comma list of: " + join(kMethods, ", "))->capture_default_str();
    app.add_option("--format", format, "json (one report per line) or text")
        ->check(CLI::IsMember({"json", "text"}))
        ->capture_default_str();
    app.add_option("--batch-size", batch_size, "Batch size for mass-batched")->capture_default_str();
    app.add_option("--out", out, "Report file (default: standard output)");
    add_threads(app, threads);
    add_config(app, config);
  }

  int run(std::ostream& os, std::ostream& es) const {
    const std::vector<std::string> list = split(methods, ',');
    if (list.empty()) throw Error(Errc::invalid_argument, "no methods given");
    for (const auto& m : list)
      if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
        throw Error(Errc::unknown_method, "unknown method '" + m + "' (known: " + join(kMethods, ", ") + ")");
    const TaskSuite s = suite.build(router.layer);
    HarnessConfig hc = harness_config(merge, router, batch_size);
    if (!hc.router.layer.empty()) hc.router.layer = resolve_layer(s.pre, hc.router.layer);
    const Prepared prep = prepare(s, hc);
    std::ostringstream data;
    for (const auto& m : list) {
      const EvalReport rep = evaluate(s, prep, m, hc);
      if (rep.normalized_accuracy > 1.0)
        es << "note: " << m << " normalized accuracy " << rep.normalized_accuracy << " exceeds 1\n";
      data << (format == "json" ? rep.to_json() + "\n" : rep.to_text() + "\n");
    }
    emit(out, data.str(), os);
    return 0;
  }
};

struct SweepCmd {
  SuiteArgs suite;
  MergeArgs merge;
  RouterArgs router;
  std::string layers;
  std::string out;
  int threads = 0;
  std::string config;

  void add(CLI::App& app) {
    suite.add(app, true);
    merge.add(app);
    router.add(app);
    app.add_option("--layers", layers, "Comma list of layers (names or indices; default: all)");
    app.add_option("--out", out, "CSV file (default: standard output)");
    add_threads(app, threads);
    add_config(app, config);
  }

  int run(std::ostream& os, std::ostream&) const {
    const TaskSuite s = suite.build(router.layer);
    HarnessConfig hc = harness_config(merge, router, 16);
    hc.router.layer = s.routing_layer;
    const Prepared prep = prepare(s, hc);
    std::vector<std::string> names;
    for (const auto& tok : split(layers, ',')) names.push_back(resolve_layer(s.pre, tok));
    emit(out, layer_sweep(s, prep, names, hc).to_csv(), os);
    return 0;
  }
};

// ---- inspect --------------------------------------------------------------

struct InspectCmd {
  std::string file;
  std::string pre;

  void add(CLI::App& app) {
    app.add_option("file", file, "Checkpoint or bundle file")->required();
    app.add_option("--pre", pre, "Pretrained checkpoint: delta spectra for checkpoints, storage ratio for bundles");
  }

  static void print_values(std::ostream& os, std::span<const double> v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << ']';
  }

  int run(std::ostream& os, std::ostream&) const {
    const std::string raw = mtsv::read_bytes(file);
    const std::size_t bytes = raw.size();
    const mtsv::Container c = mtsv::decode(raw);
    os << std::setprecision(6);
    if (is_bundle_container(c)) {
      const auto bundles = bundles_from_container(c);
      os << file << ": bundle, " << bundles.size() << " tasks, " << bytes << " bytes\n";
      for (const auto& b : bundles)
        for (const auto& l : b.layers) {
          os << b.task_id << ' ' << l.name << " m=" << l.u.rows() << " n=" << l.v.rows() << " k=" << l.rank()
             << " sigma=";
          const Vector s(l.s.begin(), l.s.end());
          print_values(os, s);
          os << '\n';
        }
      if (!pre.empty()) {
        const std::size_t pre_bytes = mtsv::read_bytes(pre).size();
        const double ratio = static_cast<double>(pre_bytes + bytes) / static_cast<double>(pre_bytes);
        os << "storage: pretrained " << pre_bytes << " bytes, bundle " << bytes << " bytes, "
           << "(pretrained + bundle) / pretrained = " << std::fixed << std::setprecision(4) << ratio << '\n';
      }
      return 0;
    }
    const Checkpoint ck = checkpoint_from_container(c);
    os << file << ": checkpoint, " << ck.layers.size() << " layers, " << ck.heads.size() << " heads, "
       << ck.parameter_count() << " parameters, " << bytes << " bytes\n";
    for (const auto& l : ck.layers)
      os << "layer " << l.name << ' ' << l.weights.rows() << 'x' << l.weights.cols() << ' ' << to_string(l.activation)
         << (l.has_bias() ? " bias" : "") << '\n';
    for (const auto& h : ck.heads) os << "head " << h.name << ' ' << h.weights.rows() << 'x' << h.weights.cols() << '\n';
    if (!pre.empty()) {
      const Checkpoint p = read_checkpoint(pre);
      const TaskDelta d = delta(ck, p, task_id_of(ck, file));
      for (const auto& l : d.layers) {
        os << "delta " << l.name << " sigma=";
        print_values(os, thin_svd(l.weights).s);
        os << '\n';
      }
    }
    return 0;
  }
};

// ---- gen-suite ------------------------------------------------------------

struct GenSuiteCmd {
  SuiteArgs suite;
  std::string dir;

  void add(CLI::App& app) {
    app.add_option("--out-dir", dir, "Directory for pre.mtsv, <task>.mtsv and data.jsonl")->required();
    suite.add(app, false);
  }

  int run(std::ostream& os, std::ostream&) const {
    const TaskSuite s = suite.build("");
    write_suite(s, dir);
    os << "suite " << s.hash() << ": " << s.tasks() << " tasks, routing layer " << s.routing_layer << ", written to "
       << dir << '\n';
    return 0;
  }
};

int exit_code(Errc code) {
  switch (code) {
    case Errc::io:
      return 3;
    case Errc::bad_magic:
    case Errc::version_mismatch:
    case Errc::truncated_payload:
    case Errc::shape_mismatch:
    case Errc::malformed_header:
    case Errc::topology_mismatch:
    case Errc::dimension_mismatch:
      return 4;
    case Errc::rank_deficient:
    case Errc::rank_too_large:
      return 5;
    default:
      return 1;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Subspace merging with input-adaptive routing for multi-task models", "mass"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  MergeCmd merge;
  InferCmd infer;
  EvalCmd eval;
  SweepCmd sweep;
  InspectCmd inspect;
  GenSuiteCmd gen;
  CLI::App* merge_app = app.add_subcommand("merge", "Fixed merge of task checkpoints onto a pretrained model");
  CLI::App* infer_app = app.add_subcommand("infer", "Two-pass routed inference over a file of inputs");
  CLI::App* eval_app = app.add_subcommand("eval", "Evaluate merging methods on a task suite");
  CLI::App* sweep_app = app.add_subcommand("sweep", "Routing accuracy at each candidate layer");
  CLI::App* inspect_app = app.add_subcommand("inspect", "Shapes, spectra and storage of a checkpoint or bundle");
  CLI::App* gen_app = app.add_subcommand("gen-suite", "Write a synthetic task suite to disk");
  merge.add(*merge_app);
  infer.add(*infer_app);
  eval.add(*eval_app);
  sweep.add(*sweep_app);
  inspect.add(*inspect_app);
  gen.add(*gen_app);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (sub == merge_app) {
      apply_config(*sub, merge.config);
      set_threads(merge.threads);
      return merge.run(out, err);
    }
    if (sub == infer_app) {
      apply_config(*sub, infer.config);
      set_threads(infer.threads);
      return infer.run(out, err);
    }
    if (sub == eval_app) {
      apply_config(*sub, eval.config);
      set_threads(eval.threads);
      return eval.run(out, err);
    }
    if (sub == sweep_app) {
      apply_config(*sub, sweep.config);
      set_threads(sweep.threads);
      return sweep.run(out, err);
    }
    if (sub == inspect_app) return inspect.run(out, err);
    return gen.run(out, err);
  } catch (const Error& e) {
    err << "mass " << name << ": " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const CLI::ParseError& e) {
    err << "mass " << name << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "mass " << name << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mass::cli
