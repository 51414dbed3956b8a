#include "mass/suite.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mass/engine.hpp"
#include "mass/kernels.hpp"
#include "mass/linalg.hpp"

namespace mass {

namespace {

MatrixD gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  MatrixD m(rows, cols);
  for (double& x : m.data()) x = dist(rng);
  return m;
}

// Orthonormal columns when rows >= cols, orthonormal rows otherwise.
MatrixD semi_orthogonal(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  if (rows >= cols) return orthogonalize(gaussian(rng, rows, cols, 1.0));
  return orthogonalize(gaussian(rng, cols, rows, 1.0)).transposed();
}

MatrixD columns(const MatrixD& m, std::size_t first, std::size_t count) {
  MatrixD out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
  return out;
}

// Orthonormal task bases with pairwise principal cosines equal to `overlap`:
// B_i = sqrt(1 - rho) E_i + sqrt(rho) S with E_1..E_T, S mutually orthogonal.
std::vector<MatrixD> planted_bases(std::mt19937_64& rng, std::size_t dim, std::size_t tasks, std::size_t rank,
                                   double overlap) {
  const std::size_t blocks = overlap > 0.0 ? tasks + 1 : tasks;
  const MatrixD q = orthogonalize(gaussian(rng, dim, blocks * rank, 1.0));
  std::vector<MatrixD> out;
  for (std::size_t t = 0; t < tasks; ++t) {
    MatrixD b = columns(q, t * rank, rank);
    if (overlap > 0.0) {
      const MatrixD shared = columns(q, tasks * rank, rank);
      const double a = std::sqrt(1.0 - overlap);
      const double s = std::sqrt(overlap);
      for (std::size_t k = 0; k < b.size(); ++k) b.data()[k] = a * b.data()[k] + s * shared.data()[k];
    }
    out.push_back(std::move(b));
  }
  return out;
}

Matrix to_float(const MatrixD& m) { return m.cast<float>(); }

MatrixD layer_weights(const Checkpoint& c, std::size_t l) { return c.layers[l].weights.cast<double>(); }

// Product of layers [from, to) of a linear model: maps widths[from] -> widths[to].
MatrixD chain(const Checkpoint& c, std::size_t from, std::size_t to) {
  MatrixD p = MatrixD::identity(c.layers[from].weights.cols());
  for (std::size_t l = from; l < to; ++l) p = kernels::matmul(layer_weights(c, l), p);
  return p;
}

void fnv1a(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
}

template <typename T>
void fnv1a_value(std::uint64_t& h, T v) {
  const auto raw = std::bit_cast<std::array<char, sizeof(T)>>(v);
  fnv1a(h, std::string_view(raw.data(), raw.size()));
}

}  // namespace

std::string synthetic_layer_name(std::size_t l) { return "l" + std::to_string(l); }
std::string synthetic_task_id(std::size_t t) { return "task_" + std::to_string(t + 1); }

void SyntheticConfig::validate() const {
  if (tasks == 0) throw Error(Errc::invalid_argument, "suite needs at least one task");
  if (widths.size() < 2) throw Error(Errc::invalid_argument, "suite needs at least two widths (one layer)");
  if (std::find(widths.begin(), widths.end(), 0u) != widths.end())
    throw Error(Errc::invalid_argument, "layer widths must be positive");
  if (rank == 0) throw Error(Errc::invalid_argument, "planted rank must be at least 1");
  if (classes < 2) throw Error(Errc::invalid_argument, "suite needs at least two classes");
  if (samples_per_task == 0) throw Error(Errc::invalid_argument, "samples per task must be positive");
  if (!(noise >= 0.0)) throw Error(Errc::invalid_argument, "noise must be non-negative");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw Error(Errc::invalid_argument, "overlap must lie in [0, 1)");
  if (!(signal_scale > 0.0) || !(delta_scale > 0.0) || tail_scale < 0.0 || bias_scale < 0.0 || min_margin < 0.0)
    throw Error(Errc::invalid_argument, "suite scales must be non-negative");
  const std::size_t layers = widths.size() - 1;
  const std::size_t l_star = routing_layer == static_cast<std::size_t>(-1) ? layers / 2 : routing_layer;
  if (l_star >= layers) throw Error(Errc::invalid_argument, "routing layer index out of range");
  for (std::size_t l = 0; l < l_star; ++l)
    if (widths[l + 1] > widths[l])
      throw Error(Errc::invalid_argument, "widths must not increase before the routing layer");
  const std::size_t blocks = overlap > 0.0 ? tasks + 1 : tasks;
  const std::size_t room = std::min(widths[l_star], widths[l_star + 1]);
  if (blocks * rank > room) {
    std::ostringstream msg;
    msg << "infeasible plant: " << blocks << " blocks of rank " << rank << " do not fit width " << room;
    throw Error(Errc::rank_too_large, msg.str());
  }
  for (const auto& p : extra_plants) {
    if (p.task >= tasks) throw Error(Errc::invalid_argument, "extra plant names an unknown task");
    if (p.layer >= l_star) throw Error(Errc::invalid_argument, "extra plants must precede the routing layer");
  }
}

void TaskSuite::validate() const {
  if (task_ids.empty()) throw Error(Errc::empty_input, "suite has no tasks");
  if (finetuned.size() != task_ids.size() || data.size() != task_ids.size())
    throw Error(Errc::invalid_argument, "suite task, checkpoint and dataset counts differ");
  pre.validate();
  if (!pre.layer_index(routing_layer))
    throw Error(Errc::unknown_layer, "routing layer '" + routing_layer + "' is not in the model");
  for (std::size_t t = 0; t < tasks(); ++t) {
    require_same_topology(pre, finetuned[t]);
    const auto h = finetuned[t].head_index(task_ids[t]);
    if (!h) throw Error(Errc::invalid_argument, "checkpoint of task '" + task_ids[t] + "' has no head of that name");
    if (data[t].inputs.size() != data[t].labels.size())
      throw Error(Errc::invalid_argument, "dataset of task '" + task_ids[t] + "' has mismatched labels");
    for (std::size_t i = 0; i < data[t].size(); ++i) {
      if (data[t].inputs[i].size() != pre.input_dim())
        throw Error(Errc::dimension_mismatch, "sample " + std::to_string(i) + " of task '" + task_ids[t] +
                                                  "' has the wrong dimension");
      if (data[t].labels[i] >= finetuned[t].heads[*h].classes())
        throw Error(Errc::invalid_argument, "label out of range in task '" + task_ids[t] + "'");
    }
  }
}

std::string TaskSuite::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv1a(h, mtsv::encode(to_container(pre)));
  for (std::size_t t = 0; t < tasks(); ++t) {
    fnv1a(h, task_ids[t]);
    fnv1a(h, mtsv::encode(to_container(finetuned[t])));
    for (std::size_t i = 0; i < data[t].size(); ++i) {
      for (double v : data[t].inputs[i]) fnv1a_value(h, v);
      fnv1a_value(h, static_cast<std::uint64_t>(data[t].labels[i]));
    }
  }
  fnv1a(h, routing_layer);
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

TaskSuite generate_synthetic_suite(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t layers = cfg.widths.size() - 1;
  const std::size_t l_star = cfg.routing_layer == static_cast<std::size_t>(-1) ? layers / 2 : cfg.routing_layer;
  const std::size_t n_star = cfg.widths[l_star];
  const std::size_t m_star = cfg.widths[l_star + 1];

  TaskSuite suite;
  suite.routing_layer = synthetic_layer_name(l_star);
  for (std::size_t l = 0; l < layers; ++l) {
    Layer layer;
    layer.name = synthetic_layer_name(l);
    layer.weights = to_float(semi_orthogonal(rng, cfg.widths[l + 1], cfg.widths[l]));
    layer.bias.assign(cfg.widths[l + 1], 0.0f);
    suite.pre.layers.push_back(std::move(layer));
  }
  suite.pre.meta["suite_seed"] = std::to_string(cfg.seed);

  const std::vector<MatrixD> right = planted_bases(rng, n_star, cfg.tasks, cfg.rank, cfg.overlap);
  const std::vector<MatrixD> left = planted_bases(rng, m_star, cfg.tasks, cfg.rank, cfg.overlap);
  Vector spectrum(cfg.rank);
  for (std::size_t j = 0; j < cfg.rank; ++j)
    spectrum[j] = cfg.delta_scale * (2.0 - static_cast<double>(j) / static_cast<double>(cfg.rank));

  const std::size_t out_dim = cfg.widths.back();
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    Checkpoint ft = suite.pre;
    ft.meta.clear();
    ft.meta["task_id"] = synthetic_task_id(t);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t m = cfg.widths[l + 1];
      const std::size_t n = cfg.widths[l];
      MatrixD d = gaussian(rng, m, n, cfg.tail_scale / std::sqrt(static_cast<double>(n)));
      if (l == l_star) {
        const MatrixD planted = kernels::scaled_outer(left[t], spectrum, right[t]);
        for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] += planted.data()[k];
      }
      for (const auto& p : cfg.extra_plants) {
        if (p.task != t || p.layer != l) continue;
        // Inputs of task t at layer l lie in span(Q^T B_t), Q the pre chain from l to the routing layer.
        const MatrixD be = kernels::matmul(chain(suite.pre, l, l_star).transposed(), right[t]);
        const MatrixD proj = kernels::matmul(be, be.transposed());
        const MatrixD extra = kernels::matmul(layer_weights(suite.pre, l), proj);
        for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] += p.strength * extra.data()[k];
      }
      Layer& layer = ft.layers[l];
      for (std::size_t k = 0; k < d.size(); ++k)
        layer.weights.data()[k] = static_cast<float>(static_cast<double>(layer.weights.data()[k]) + d.data()[k]);
      std::normal_distribution<double> bias_dist(0.0, cfg.bias_scale > 0.0 ? cfg.bias_scale : 1.0);
      for (float& b : layer.bias) b = cfg.bias_scale > 0.0 ? static_cast<float>(bias_dist(rng)) : 0.0f;
    }
    Head head;
    head.name = synthetic_task_id(t);
    head.weights = to_float(gaussian(rng, cfg.classes, out_dim, 1.0 / std::sqrt(static_cast<double>(out_dim))));
    std::normal_distribution<double> head_bias(0.0, 0.1);
    for (std::size_t c = 0; c < cfg.classes; ++c) head.bias.push_back(static_cast<float>(head_bias(rng)));
    ft.heads.push_back(std::move(head));
    suite.finetuned.push_back(std::move(ft));
    suite.task_ids.push_back(synthetic_task_id(t));
  }
  suite.planted = right;

  // Inputs are pulled back through the (row-orthonormal) pre chain so that
  // the clean routing-layer input of the pretrained model is B_t c.
  const MatrixD pull = chain(suite.pre, 0, l_star).transposed();
  const std::size_t in_dim = cfg.widths.front();
  std::normal_distribution<double> coeff(0.0, cfg.signal_scale / std::sqrt(static_cast<double>(cfg.rank)));
  std::normal_distribution<double> noise(0.0, cfg.noise * cfg.signal_scale / std::sqrt(static_cast<double>(in_dim)));
  const std::size_t max_attempts = 1000 * cfg.samples_per_task;
  const std::array<std::size_t, 1> head0{0};
  for (std::size_t t = 0; t < cfg.tasks; ++t) {
    Dataset ds;
    std::size_t attempts = 0;
    while (ds.size() < cfg.samples_per_task) {
      if (++attempts > max_attempts)
        throw Error(Errc::invalid_argument, "could not draw samples with the requested class margin");
      Vector c(cfg.rank);
      for (double& v : c) v = coeff(rng);
      Vector z(n_star, 0.0);
      for (std::size_t r = 0; r < n_star; ++r)
        for (std::size_t j = 0; j < cfg.rank; ++j) z[r] += right[t](r, j) * c[j];
      Vector x(in_dim, 0.0);
      for (std::size_t r = 0; r < in_dim; ++r)
        for (std::size_t j = 0; j < n_star; ++j) x[r] += pull(r, j) * z[j];

      const Vector logits = forward(suite.finetuned[t], x, {}, head0).logits.front();
      Vector sorted = logits;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      double ms = 0.0;
      for (double v : logits) ms += v * v;
      const double rms = std::sqrt(ms / static_cast<double>(logits.size()));
      const bool wide_margin = sorted[0] - sorted[1] >= cfg.min_margin * rms;
      // Noise is drawn for every candidate so the stream does not depend on
      // which candidates are rejected.
      Vector n(in_dim);
      for (double& v : n) v = cfg.noise > 0.0 ? noise(rng) : 0.0;
      if (!wide_margin) continue;
      const auto label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      for (std::size_t r = 0; r < in_dim; ++r) x[r] += n[r];
      ds.inputs.push_back(std::move(x));
      ds.labels.push_back(label);
    }
    suite.data.push_back(std::move(ds));
  }
  suite.validate();
  return suite;
}

void write_datasets(const TaskSuite& suite, const std::filesystem::path& path) {
  std::ostringstream out;
  for (std::size_t t = 0; t < suite.tasks(); ++t)
    for (std::size_t i = 0; i < suite.data[t].size(); ++i) {
      nlohmann::json j{{"task", suite.task_ids[t]}, {"x", suite.data[t].inputs[i]}, {"label", suite.data[t].labels[i]}};
      out << j.dump() << '\n';
    }
  mtsv::write_bytes(path, out.str());
}

std::vector<Dataset> read_datasets(const std::filesystem::path& path, const std::vector<std::string>& task_ids) {
  std::istringstream in(mtsv::read_bytes(path));
  std::vector<Dataset> out(task_ids.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const auto task = j.at("task").get<std::string>();
      const auto it = std::find(task_ids.begin(), task_ids.end(), task);
      if (it == task_ids.end()) throw Error(Errc::invalid_argument, where + ": unknown task '" + task + "'");
      Dataset& ds = out[static_cast<std::size_t>(it - task_ids.begin())];
      ds.inputs.push_back(j.at("x").get<Vector>());
      ds.labels.push_back(j.at("label").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::malformed_header, where + ": " + e.what());
    }
  }
  return out;
}

void write_suite(const TaskSuite& suite, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create directory '" + dir.string() + "': " + ec.message());
  write_checkpoint(suite.pre, dir / "pre.mtsv");
  for (std::size_t t = 0; t < suite.tasks(); ++t) write_checkpoint(suite.finetuned[t], dir / (suite.task_ids[t] + ".mtsv"));
  write_datasets(suite, dir / "data.jsonl");
}

std::string task_id_of(const Checkpoint& c, const std::filesystem::path& path) {
  if (auto it = c.meta.find("task_id"); it != c.meta.end() && !it->second.empty()) return it->second;
  return path.stem().string();
}

TaskSuite load_suite(const std::filesystem::path& pre, const std::vector<std::filesystem::path>& tasks,
                     const std::filesystem::path& data, const std::string& routing_layer) {
  TaskSuite suite;
  suite.pre = read_checkpoint(pre);
  for (const auto& p : tasks) {
    Checkpoint ft = read_checkpoint(p);
    const std::string id = task_id_of(ft, p);
    if (std::find(suite.task_ids.begin(), suite.task_ids.end(), id) != suite.task_ids.end())
      throw Error(Errc::invalid_argument, "task id '" + id + "' appears twice");
    if (!ft.head_index(id) && ft.heads.size() == 1) ft.heads.front().name = id;
    suite.task_ids.push_back(id);
    suite.finetuned.push_back(std::move(ft));
  }
  suite.data = read_datasets(data, suite.task_ids);
  suite.routing_layer =
      routing_layer.empty() ? suite.pre.layers.at(suite.pre.layers.size() / 2).name : routing_layer;
  suite.validate();
  return suite;
}

}  // namespace mass
