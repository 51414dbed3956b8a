// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>

#include "cli.hpp"
#include "mass/engine.hpp"
#include "mass/harness.hpp"
#include "mass/suite.hpp"
#include "support.hpp"

using namespace mass;
using mass::test::Rng;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome outcome(bool pass, const std::string& detail) { return {pass, detail}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ---------------------------------------------------------------------

Outcome projection_optimality() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(1001);
  std::size_t violations = 0;
  double worst = -1e300;
  for (int pair = 0; pair < 1000; ++pair) {
    const std::size_t n = test::uniform_size(rng, 1, 64);
    const std::size_t k = test::uniform_size(rng, 1, n);
    const MatrixD v = test::random_orthonormal(rng, n, k);
    const Vector z = test::random_vector(rng, n);
    const double r = project_residual(z, v);
    for (int a = 0; a < 1000; ++a) {
      const Vector alpha = test::random_vector(rng, k);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double w = 0.0;
        for (std::size_t j = 0; j < k; ++j) w += v(i, j) * alpha[j];
        sq += (z[i] - w) * (z[i] - w);
      }
      const double gap = r - std::sqrt(sq);
      worst = std::max(worst, gap);
      if (gap > 1e-9) ++violations;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome(violations == 0 && secs < 10.0,
                 fmt("violations=%zu max(residual - dist)=%.3g runtime=%.2fs", violations, worst, secs));
}

// ---- 2 ---------------------------------------------------------------------

Outcome orthogonalization() {
  Rng rng(1002);
  double worst_orth = 0.0;
  double worst_polar = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = test::uniform_size(rng, 1, 32);
    const std::size_t k = test::uniform_size(rng, 1, n);
    const MatrixD q = orthogonalize(test::random_matrix(rng, n, k));
    worst_orth = std::max(worst_orth, orthonormality_error(q));
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = test::uniform_size(rng, 1, 8);
    const std::size_t k = test::uniform_size(rng, 1, n);
    const MatrixD m = test::random_matrix(rng, n, k);
    worst_polar = std::max(worst_polar, max_abs_difference(orthogonalize(m), test::gram_polar_factor(m)));
  }
  return outcome(worst_orth <= 1e-5 && worst_polar <= 1e-6,
                 fmt("max ||Q^T Q - I||_F=%.3g max |Q - polar oracle|=%.3g", worst_orth, worst_polar));
}

// ---- 3, 4 ------------------------------------------------------------------

Outcome single_task_recovery() {
  Rng rng(1003);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> widths;
    const std::size_t depth = test::uniform_size(rng, 1, 4);
    for (std::size_t i = 0; i <= depth; ++i) widths.push_back(test::uniform_size(rng, 2, 16));
    const Checkpoint pre = test::random_checkpoint(rng, widths);
    const Checkpoint ft = test::perturbed(rng, pre, 16);
    const TaskDelta d = delta(ft, pre, "t");
    std::vector<std::size_t> full;
    for (const auto& l : d.layers) full.push_back(std::min(l.weights.rows(), l.weights.cols()));
    const std::vector<TaskSubspaceBundle> b{decompose_task(d, full)};
    worst = std::max(worst, test::max_abs_difference(tsv_merge(pre, b, 1.0).weights, ft));
  }
  return outcome(worst <= 1e-5, fmt("50 models, max |merged - fine-tuned|=%.3g", worst));
}

Outcome orthogonal_additivity() {
  Rng rng(1004);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = test::uniform_size(rng, 4, 24);
    const std::size_t n = test::uniform_size(rng, 4, 24);
    const std::size_t k = std::min(m, n) / 2;
    Checkpoint pre;
    pre.layers.push_back({"w", test::random_float_matrix(rng, m, n), test::random_floats(rng, m), Activation::identity});
    const MatrixD u = test::random_orthonormal(rng, m, 2 * k);
    const MatrixD v = test::random_orthonormal(rng, n, 2 * k);
    std::vector<TaskDelta> deltas;
    std::vector<TaskSubspaceBundle> bundles;
    for (std::size_t t = 0; t < 2; ++t) {
      Checkpoint ft = pre;
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += (1.0 + j) * u(r, t * k + j) * v(c, t * k + j);
          ft.layers[0].weights(r, c) = static_cast<float>(ft.layers[0].weights(r, c) + acc);
        }
      for (float& b : ft.layers[0].bias) b += 0.01f;
      deltas.push_back(delta(ft, pre, "t" + std::to_string(t)));
      bundles.push_back(decompose_task(deltas.back(), uniform_ranks(deltas.back(), k)));
    }
    const Checkpoint merged = tsv_merge(pre, bundles, 1.0).weights;
    Checkpoint expected = apply_delta(apply_delta(pre, deltas[0]), deltas[1]);
    worst = std::max(worst, test::max_abs_difference(merged, expected));
  }
  return outcome(worst <= 1e-5, fmt("20 layer pairs, max |merged - (pre + d1 + d2)|=%.3g", worst));
}

// ---- 5 ---------------------------------------------------------------------

Outcome redundancy_filter() {
  const double l22 = std::sqrt(1.0 - 0.36);
  const double l32 = (0.2 - 0.06) / l22;
  const std::vector<Vector> hand{{1.0, 0.0, 0.0}, {0.6, l22, 0.0}, {0.1, l32, std::sqrt(1.0 - 0.01 - l32 * l32)}};
  const bool greedy = filter_redundant_vectors(hand, 0.5) == std::vector<std::size_t>{0, 2};

  TaskDelta a;
  a.task_id = "a";
  a.layers.push_back({"w", MatrixD(2, 2, {1.0, 2.0, 3.0, 4.0}), {}});
  TaskDelta dup = a;
  dup.task_id = "dup";
  const std::vector<TaskDelta> pair{a, dup};
  const bool duplicate = filter_redundant(pair, 0.9) == std::vector<std::size_t>{0};

  Rng rng(1005);
  std::size_t idempotent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Checkpoint pre = test::random_checkpoint(rng, {5, 4, 3});
    std::vector<TaskDelta> ds;
    const std::size_t count = test::uniform_size(rng, 1, 6);
    for (std::size_t i = 0; i < count; ++i) {
      if (i > 0 && test::uniform_size(rng, 0, 2) == 0) {
        ds.push_back(ds[test::uniform_size(rng, 0, i - 1)]);
      } else {
        ds.push_back(delta(test::perturbed(rng, pre, 1), pre, "t" + std::to_string(i)));
      }
    }
    const double eps = 0.1 + 0.8 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto first = filter_redundant(ds, eps);
    std::vector<TaskDelta> kept;
    for (std::size_t i : first) kept.push_back(ds[i]);
    std::vector<std::size_t> all(kept.size());
    std::iota(all.begin(), all.end(), 0);
    idempotent += filter_redundant(kept, eps) == all ? 1 : 0;
  }
  return outcome(greedy && duplicate && idempotent == 100,
                 fmt("greedy {0,2}=%s duplicate discarded=%s idempotent %zu/100", greedy ? "yes" : "no",
                     duplicate ? "yes" : "no", idempotent));
}

// ---- 6, 7, 8, 9 ------------------------------------------------------------

HarnessConfig top1() {
  HarnessConfig cfg;
  cfg.router.eta = 0.0;
  cfg.router.top_k = 1;
  return cfg;
}

Outcome noiseless_routing() {
  const auto start = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.noise = 0.0;
  sc.seed = 6;
  const TaskSuite s = generate_synthetic_suite(sc);
  const HarnessConfig cfg = top1();
  const Prepared prep = prepare(s, cfg);
  const EvalReport r = evaluate(s, prep, "mass", cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::size_t samples = 0;
  for (const auto& d : s.data) samples += d.size();
  return outcome(r.routing_accuracy == 1.0 && r.mean_accuracy == 1.0 && samples >= 400 && secs < 30.0,
                 fmt("%zu samples, routing=%.4f classify=%.4f runtime=%.2fs", samples, *r.routing_accuracy,
                     r.mean_accuracy, secs));
}

Outcome noisy_routing() {
  double worst = 1.0;
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticConfig sc;
    sc.widths = {32, 32, 32};
    sc.tasks = 4;
    sc.rank = 4;
    sc.noise = 0.1;
    sc.samples_per_task = 100;
    sc.seed = seed;
    const TaskSuite s = generate_synthetic_suite(sc);
    const HarnessConfig cfg = top1();
    const Prepared prep = prepare(s, cfg);
    const double acc = *evaluate(s, prep, "mass", cfg).routing_accuracy;
    worst = std::min(worst, acc);
    sum += acc;
  }
  return outcome(worst >= 0.95, fmt("10 seeds x 400 samples, min routing=%.4f mean=%.4f", worst, sum / 10.0));
}

Outcome method_ordering() {
  const std::vector<std::string> methods{"mass", "tsv-m", "task-arithmetic", "weight-average"};
  Vector total(methods.size(), 0.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticConfig sc;
    sc.seed = seed;
    const TaskSuite s = generate_synthetic_suite(sc);
    const HarnessConfig cfg;
    const Prepared prep = prepare(s, cfg);
    for (std::size_t m = 0; m < methods.size(); ++m) total[m] += evaluate(s, prep, methods[m], cfg).normalized_accuracy;
  }
  for (double& t : total) t /= 10.0;
  const bool ordered = total[0] >= total[1] && total[1] >= total[2] && total[2] >= total[3];
  return outcome(ordered, fmt("mean normalized over 10 seeds: mass=%.4f tsv-m=%.4f task-arithmetic=%.4f "
                              "weight-average=%.4f",
                              total[0], total[1], total[2], total[3]));
}

Outcome batched_mode() {
  double each = 0.0;
  double batched = 0.0;
  bool once = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticConfig sc;
    sc.seed = seed;
    const TaskSuite s = generate_synthetic_suite(sc);
    HarnessConfig cfg;
    cfg.batch_size = 10;
    const Prepared prep = prepare(s, cfg);
    each += evaluate(s, prep, "mass", cfg).mean_accuracy / 10.0;
    batched += evaluate(s, prep, "mass-batched", cfg).mean_accuracy / 10.0;

    MassEngine engine = make_engine(s, prep, cfg);
    std::size_t merges = 0;
    engine.on_adaptive_merge([&](const std::vector<std::size_t>&, bool) { ++merges; });
    for (std::size_t t = 0; t < s.tasks(); ++t) {
      const auto& xs = s.data[t].inputs;
      for (std::size_t b = 0; b + cfg.batch_size <= xs.size(); b += cfg.batch_size) {
        merges = 0;
        engine.classify_batched(std::span(xs).subspan(b, cfg.batch_size));
        once = once && merges == 1;
      }
    }
  }
  return outcome(batched >= each && once,
                 fmt("mean accuracy batched=%.4f per-sample=%.4f, one merge per batch=%s", batched, each,
                     once ? "yes" : "no"));
}

// ---- 10 --------------------------------------------------------------------

Outcome cost_contract() {
  SyntheticConfig sc;
  sc.seed = 10;
  const TaskSuite s = generate_synthetic_suite(sc);
  const HarnessConfig cfg;
  const Prepared prep = prepare(s, cfg);
  MassEngine engine = make_engine(s, prep, cfg);
  bool two = true;
  bool heads = true;
  for (std::size_t t = 0; t < s.tasks(); ++t)
    for (std::size_t i = 0; i < 20; ++i) {
      engine.reset_counters();
      const Prediction p = engine.classify(s.data[t].inputs[i]);
      const EngineCounters c = engine.counters();
      two = two && c.forward_passes == 2;
      heads = heads && c.head_evaluations == p.routing.selected.size();
    }

  const auto dir = std::filesystem::temp_directory_path() / "mass_acceptance_storage";
  std::filesystem::remove_all(dir);
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "mass");
    return cli::run(args, out, err);
  };
  double ratio = -1.0;
  if (run({"gen-suite", "--out-dir", dir.string(), "--seed", "10"}) == 0) {
    std::vector<std::string> merge{"merge", "--pre", (dir / "pre.mtsv").string(), "--out", (dir / "m.mtsv").string(),
                                   "--tasks"};
    for (const auto& id : s.task_ids) merge.push_back((dir / (id + ".mtsv")).string());
    out.str("");
    if (run(merge) == 0) {
      out.str("");
      if (run({"inspect", (dir / "m.bundles.mtsv").string(), "--pre", (dir / "pre.mtsv").string()}) == 0) {
        std::smatch m;
        const std::string text = out.str();
        if (std::regex_search(text, m, std::regex(R"(\(pretrained \+ bundle\) / pretrained = ([0-9.]+))")))
          ratio = std::stod(m[1]);
      }
    }
  }
  return outcome(two && heads && ratio > 0.0 && ratio <= 2.5,
                 fmt("2 forward passes per sample=%s, heads = |selected|=%s, inspect storage ratio=%.4f (bound 2.5)",
                     two ? "yes" : "no", heads ? "yes" : "no", ratio));
}

// ---- 11 --------------------------------------------------------------------

Errc decode_error(std::string_view bytes) {
  try {
    mtsv::decode(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

Outcome serialization() {
  Rng rng(1011);
  std::size_t exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> widths;
    const std::size_t depth = test::uniform_size(rng, 1, 4);
    for (std::size_t i = 0; i <= depth; ++i) widths.push_back(test::uniform_size(rng, 1, 12));
    const Checkpoint c = test::random_checkpoint(rng, widths, test::uniform_size(rng, 0, 3), trial % 3 != 0);
    const auto path = std::filesystem::temp_directory_path() / "mass_acceptance_roundtrip.mtsv";
    write_checkpoint(c, path);
    const std::string bytes = mtsv::read_bytes(path);
    const Checkpoint back = read_checkpoint(path);
    exact += back == c && mtsv::encode(to_container(back)) == bytes ? 1 : 0;
  }

  const std::string good = mtsv::encode(to_container(test::random_checkpoint(rng, {4, 3, 2}, 1)));
  std::string magic = good;
  magic[1] = 'X';
  std::string version = good;
  version[4] = 9;
  std::string shape = good;
  const auto at = shape.find("\"shape\":[3,4]");
  if (at != std::string::npos) shape.replace(at, 13, "\"shape\":[3,5]");
  const bool corruption = decode_error(magic) == Errc::bad_magic && decode_error(version) == Errc::version_mismatch &&
                          decode_error(good.substr(0, good.size() - 3)) == Errc::truncated_payload &&
                          at != std::string::npos && decode_error(shape) == Errc::shape_mismatch;
  return outcome(exact == 100 && corruption,
                 fmt("byte-exact round trips %zu/100, corruption classes %s", exact, corruption ? "ok" : "wrong"));
}

// ---- 12 --------------------------------------------------------------------

Outcome layer_sweep_criterion() {
  SyntheticConfig sc;
  sc.noise = 0.0;
  sc.seed = 12;
  const TaskSuite s = generate_synthetic_suite(sc);
  const HarnessConfig cfg;
  const Prepared prep = prepare(s, cfg);
  const SweepTable t = layer_sweep(s, prep, {}, cfg);
  bool peak = false;
  bool lower = true;
  std::string means;
  for (const auto& row : t.rows) {
    means += row.layer + "=" + fmt("%.3f", row.mean) + " ";
    if (row.layer == s.routing_layer) {
      peak = row.mean == 1.0;
    } else {
      lower = lower && row.mean < 1.0;
    }
  }

  // Task 1 also planted at the first layer: its best layer moves there while
  // task 2 keeps the planted one.
  SyntheticConfig moved = sc;
  moved.noise = 0.1;
  moved.extra_plants.push_back({1, 0, 1.0});
  const TaskSuite s2 = generate_synthetic_suite(moved);
  const Prepared prep2 = prepare(s2, cfg);
  const SweepTable t2 = layer_sweep(s2, prep2, {}, cfg);
  auto best = [&](std::size_t task) {
    std::size_t b = 0;
    for (std::size_t r = 1; r < t2.rows.size(); ++r)
      if (t2.rows[r].per_task[task] > t2.rows[b].per_task[task]) b = r;
    return t2.rows[b].layer;
  };
  const bool differ = best(1) != best(2);
  return outcome(peak && lower && differ, fmt("mean by layer: %s| extra plant: best layer task_2=%s task_3=%s",
                                              means.c_str(), best(1).c_str(), best(2).c_str()));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"projection optimality", projection_optimality},
      {"orthogonalization", orthogonalization},
      {"single-task exact recovery", single_task_recovery},
      {"orthogonal-task additivity", orthogonal_additivity},
      {"redundancy filter", redundancy_filter},
      {"noiseless routing", noiseless_routing},
      {"noisy routing", noisy_routing},
      {"method ordering", method_ordering},
      {"batched mode", batched_mode},
      {"two-pass cost and storage", cost_contract},
      {"serialization", serialization},
      {"layer sweep", layer_sweep_criterion},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
