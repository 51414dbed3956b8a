#include "mass/checkpoint.hpp"

#include <set>
#include <sstream>

namespace mass {

namespace {

Matrix column_of(std::span<const float> v) {
  return Matrix(v.size(), 1, std::vector<float>(v.begin(), v.end()));
}

std::vector<float> column_values(const Matrix& m, const std::string& what) {
  if (m.cols() != 1) throw Error(Errc::shape_mismatch, what + " must be a width-1 matrix");
  return m.values();
}

std::string shape_str(const Matrix& m) {
  std::ostringstream s;
  s << m.rows() << "x" << m.cols();
  return s.str();
}

}  // namespace

std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "identity";
}

Activation parse_activation(std::string_view tag) {
  if (tag == "identity") return Activation::identity;
  if (tag == "relu") return Activation::relu;
  if (tag == "gelu") return Activation::gelu;
  throw Error(Errc::topology_mismatch, "unknown activation tag '" + std::string(tag) + "'");
}

void Checkpoint::validate() const {
  if (layers.empty()) throw Error(Errc::topology_mismatch, "checkpoint has no layers");
  std::set<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (!names.insert(l.name).second)
      throw Error(Errc::topology_mismatch, "duplicate layer name '" + l.name + "'");
    if (l.weights.rows() == 0 || l.weights.cols() == 0)
      throw Error(Errc::shape_mismatch, "layer '" + l.name + "' has an empty weight matrix");
    if (l.has_bias() && l.bias.size() != l.weights.rows())
      throw Error(Errc::shape_mismatch, "layer '" + l.name + "' bias length differs from rows");
    if (!l.weights.all_finite())
      throw Error(Errc::non_finite, "layer '" + l.name + "' weights contain NaN or Inf");
    for (float b : l.bias)
      if (!std::isfinite(b)) throw Error(Errc::non_finite, "layer '" + l.name + "' bias is not finite");
    if (i > 0 && l.weights.cols() != layers[i - 1].weights.rows()) {
      throw Error(Errc::topology_mismatch,
                  "layer '" + l.name + "' (" + shape_str(l.weights) + ") does not compose with '" +
                      layers[i - 1].name + "' (" + shape_str(layers[i - 1].weights) + ")");
    }
  }
  std::set<std::string> head_names;
  for (const Head& h : heads) {
    if (!head_names.insert(h.name).second)
      throw Error(Errc::topology_mismatch, "duplicate head name '" + h.name + "'");
    if (h.weights.rows() == 0 || h.weights.cols() != output_dim())
      throw Error(Errc::topology_mismatch, "head '" + h.name + "' input dimension " +
                                               std::to_string(h.weights.cols()) +
                                               " differs from model output " +
                                               std::to_string(output_dim()));
    if (h.bias.size() != h.weights.rows())
      throw Error(Errc::shape_mismatch, "head '" + h.name + "' bias length differs from classes");
    if (!h.weights.all_finite())
      throw Error(Errc::non_finite, "head '" + h.name + "' contains NaN or Inf");
    for (float b : h.bias)
      if (!std::isfinite(b)) throw Error(Errc::non_finite, "head '" + h.name + "' bias is not finite");
  }
}

std::optional<std::size_t> Checkpoint::layer_index(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> Checkpoint::head_index(std::string_view name) const {
  for (std::size_t i = 0; i < heads.size(); ++i)
    if (heads[i].name == name) return i;
  return std::nullopt;
}

std::size_t Checkpoint::input_dim() const {
  return layers.empty() ? 0 : layers.front().weights.cols();
}

std::size_t Checkpoint::output_dim() const {
  return layers.empty() ? 0 : layers.back().weights.rows();
}

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  for (const auto& h : heads) n += h.weights.size() + h.bias.size();
  return n;
}

mtsv::Container to_container(const Checkpoint& c) {
  c.validate();
  mtsv::Container out;
  out.meta = c.meta;
  for (const auto& l : c.layers) {
    out.tensors.push_back({l.name, std::string(kRoleLayer), l.weights});
    if (l.has_bias()) out.tensors.push_back({l.name, std::string(kRoleBias), column_of(l.bias)});
    out.topology.layer_order.push_back(l.name);
    out.topology.activations.emplace_back(to_string(l.activation));
  }
  for (const auto& h : c.heads) {
    out.tensors.push_back({h.name, std::string(kRoleHead), h.weights});
    out.tensors.push_back({h.name, std::string(kRoleHeadBias), column_of(h.bias)});
    out.topology.heads.push_back(h.name);
  }
  return out;
}

Checkpoint checkpoint_from_container(const mtsv::Container& c) {
  const auto& topo = c.topology;
  if (topo.activations.size() != topo.layer_order.size())
    throw Error(Errc::topology_mismatch, "activation list length differs from layer_order");
  std::size_t layer_tensors = 0;
  std::size_t head_tensors = 0;
  for (const auto& t : c.tensors) {
    if (t.role == kRoleLayer) ++layer_tensors;
    else if (t.role == kRoleHead) ++head_tensors;
    else if (t.role != kRoleBias && t.role != kRoleHeadBias)
      throw Error(Errc::topology_mismatch, "tensor '" + t.name + "' has role '" + t.role +
                                               "', not a checkpoint role");
  }
  if (layer_tensors != topo.layer_order.size() || head_tensors != topo.heads.size())
    throw Error(Errc::topology_mismatch, "tensor list does not match the declared topology");

  Checkpoint ck;
  ck.meta = c.meta;
  for (std::size_t i = 0; i < topo.layer_order.size(); ++i) {
    const std::string& name = topo.layer_order[i];
    const auto* w = c.find(name, kRoleLayer);
    if (!w) throw Error(Errc::topology_mismatch, "layer '" + name + "' has no weight tensor");
    Layer l{name, w->value, {}, parse_activation(topo.activations[i])};
    if (const auto* b = c.find(name, kRoleBias)) l.bias = column_values(b->value, "bias of '" + name + "'");
    ck.layers.push_back(std::move(l));
  }
  for (const auto& name : topo.heads) {
    const auto* w = c.find(name, kRoleHead);
    const auto* b = c.find(name, kRoleHeadBias);
    if (!w || !b) throw Error(Errc::topology_mismatch, "head '" + name + "' is incomplete");
    ck.heads.push_back({name, w->value, column_values(b->value, "bias of head '" + name + "'")});
  }
  for (const auto& t : c.tensors) {
    if (t.role == kRoleBias && !ck.layer_index(t.name))
      throw Error(Errc::topology_mismatch, "bias '" + t.name + "' has no layer");
    if (t.role == kRoleHeadBias && !ck.head_index(t.name))
      throw Error(Errc::topology_mismatch, "head bias '" + t.name + "' has no head");
  }
  try {
    ck.validate();
  } catch (const Error& e) {
    if (e.code() == Errc::topology_mismatch || e.code() == Errc::non_finite) throw;
    throw Error(Errc::shape_mismatch, e.what());
  }
  return ck;
}

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  mtsv::write_file(to_container(c), path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_container(mtsv::read_file(path));
}

const LayerDelta& TaskDelta::layer(std::string_view name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw Error(Errc::unknown_layer, "task '" + task_id + "' has no layer '" + std::string(name) + "'");
}

void require_same_topology(const Checkpoint& a, const Checkpoint& b) {
  if (a.layers.size() != b.layers.size())
    throw Error(Errc::topology_mismatch, "checkpoints have different layer counts");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const Layer& x = a.layers[i];
    const Layer& y = b.layers[i];
    if (x.name != y.name)
      throw Error(Errc::topology_mismatch, "layer " + std::to_string(i) + " is '" + x.name +
                                               "' in one checkpoint and '" + y.name + "' in the other");
    if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols())
      throw Error(Errc::topology_mismatch, "layer '" + x.name + "' shapes differ (" +
                                               shape_str(x.weights) + " vs " + shape_str(y.weights) + ")");
    if (x.has_bias() != y.has_bias())
      throw Error(Errc::topology_mismatch, "layer '" + x.name + "' bias presence differs");
    if (x.activation != y.activation)
      throw Error(Errc::topology_mismatch, "layer '" + x.name + "' activation differs");
  }
}

TaskDelta delta(const Checkpoint& ft, const Checkpoint& pre, std::string task_id) {
  require_same_topology(ft, pre);
  TaskDelta d{std::move(task_id), {}};
  d.layers.reserve(pre.layers.size());
  for (std::size_t i = 0; i < pre.layers.size(); ++i) {
    const Layer& f = ft.layers[i];
    const Layer& p = pre.layers[i];
    LayerDelta ld{p.name, MatrixD(p.weights.rows(), p.weights.cols()), {}};
    auto out = ld.weights.data();
    auto fw = f.weights.data();
    auto pw = p.weights.data();
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = static_cast<double>(fw[k]) - static_cast<double>(pw[k]);
    if (p.has_bias()) {
      ld.bias.resize(p.bias.size());
      for (std::size_t k = 0; k < p.bias.size(); ++k)
        ld.bias[k] = static_cast<double>(f.bias[k]) - static_cast<double>(p.bias[k]);
    }
    d.layers.push_back(std::move(ld));
  }
  return d;
}

Checkpoint apply_delta(const Checkpoint& pre, const TaskDelta& d, double alpha) {
  Checkpoint out = pre;
  for (auto& l : out.layers) {
    const LayerDelta& ld = d.layer(l.name);
    if (ld.weights.rows() != l.weights.rows() || ld.weights.cols() != l.weights.cols())
      throw Error(Errc::topology_mismatch, "delta for '" + l.name + "' has the wrong shape");
    auto w = l.weights.data();
    auto dw = ld.weights.data();
    for (std::size_t k = 0; k < w.size(); ++k)
      w[k] = static_cast<float>(static_cast<double>(w[k]) + alpha * dw[k]);
    if (ld.bias.size() != l.bias.size())
      throw Error(Errc::topology_mismatch, "delta bias for '" + l.name + "' has the wrong length");
    for (std::size_t k = 0; k < l.bias.size(); ++k)
      l.bias[k] = static_cast<float>(static_cast<double>(l.bias[k]) + alpha * ld.bias[k]);
  }
  return out;
}

Vector flatten(const TaskDelta& d) {
  Vector out;
  std::size_t n = 0;
  for (const auto& l : d.layers) n += l.weights.size();
  out.reserve(n);
  for (const auto& l : d.layers) out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
  return out;
}

Vector flatten_layer(const TaskDelta& d, std::string_view layer) {
  const auto& w = d.layer(layer).weights;
  return Vector(w.data().begin(), w.data().end());
}

}  // namespace mass
