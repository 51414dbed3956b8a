#include "mass/mtsv.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mass::mtsv {

namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::string_view b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

json topology_to_json(const Topology& t) {
  return json{{"layer_order", t.layer_order}, {"activations", t.activations}, {"heads", t.heads}};
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw Error(Errc::malformed_header, where + " lacks field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_header, where + " field '" + key + "': " + e.what());
  }
}

}  // namespace

const Tensor* Container::find(std::string_view name, std::string_view role) const {
  for (const auto& t : tensors)
    if (t.name == name && t.role == role) return &t;
  return nullptr;
}

std::string encode(const Container& c) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : c.tensors) {
    if (t.value.rows() == 0 || t.value.cols() == 0)
      throw Error(Errc::shape_mismatch, "tensor '" + t.name + "' has an empty shape");
    if (!t.value.all_finite())
      throw Error(Errc::non_finite, "tensor '" + t.name + "' contains NaN or Inf");
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.value.size()) * 4u;
    entries.push_back(json{{"name", t.name},
                           {"role", t.role},
                           {"shape", {t.value.rows(), t.value.cols()}},
                           {"dtype", "f32"},
                           {"offset", offset},
                           {"byte_length", bytes}});
    offset += bytes;
  }
  const json header{{"tensors", entries}, {"topology", topology_to_json(c.topology)}, {"meta", c.meta}};
  const std::string text = header.dump();

  std::string out;
  out.reserve(kPreambleBytes + text.size() + offset);
  out.append(kMagic.begin(), kMagic.end());
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : c.tensors) {
    for (float v : t.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Container decode(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw Error(Errc::bad_magic, "file does not start with \"MTSV\"");
  if (bytes.size() < kPreambleBytes)
    throw Error(Errc::truncated_payload, "file ends inside the preamble");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) {
    std::ostringstream msg;
    msg << "format version " << version << ", expected " << kVersion;
    throw Error(Errc::version_mismatch, msg.str());
  }
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - kPreambleBytes)
    throw Error(Errc::truncated_payload, "file ends inside the JSON header");

  json header;
  try {
    header = json::parse(bytes.substr(kPreambleBytes, header_len));
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_header, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error(Errc::malformed_header, "header is not a JSON object");

  const std::string_view payload = bytes.substr(kPreambleBytes + header_len);
  Container c;
  const json& topo = header.contains("topology") ? header["topology"] : json::object();
  c.topology.layer_order = field<std::vector<std::string>>(topo, "layer_order", "topology");
  c.topology.activations = field<std::vector<std::string>>(topo, "activations", "topology");
  c.topology.heads = field<std::vector<std::string>>(topo, "heads", "topology");
  c.meta = field<std::map<std::string, std::string>>(header, "meta", "header");

  const auto entries = field<json>(header, "tensors", "header");
  if (!entries.is_array()) throw Error(Errc::malformed_header, "'tensors' is not an array");

  std::uint64_t expected_offset = 0;
  for (const auto& e : entries) {
    Tensor t;
    t.name = field<std::string>(e, "name", "tensor entry");
    const std::string where = "tensor '" + t.name + "'";
    t.role = field<std::string>(e, "role", where);
    const auto dtype = field<std::string>(e, "dtype", where);
    if (dtype != "f32") throw Error(Errc::malformed_header, where + " has unsupported dtype " + dtype);
    const auto shape = field<std::vector<std::uint64_t>>(e, "shape", where);
    const auto offset = field<std::uint64_t>(e, "offset", where);
    const auto byte_length = field<std::uint64_t>(e, "byte_length", where);
    if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0)
      throw Error(Errc::shape_mismatch, where + " needs a positive [rows, cols] shape");
    const std::uint64_t count = shape[0] * shape[1];
    if (byte_length != count * 4u) {
      std::ostringstream msg;
      msg << where << " declares " << byte_length << " bytes for shape [" << shape[0] << ", "
          << shape[1] << "]";
      throw Error(Errc::shape_mismatch, msg.str());
    }
    if (offset != expected_offset) {
      std::ostringstream msg;
      msg << where << " at offset " << offset << ", expected " << expected_offset;
      throw Error(Errc::shape_mismatch, msg.str());
    }
    if (offset + byte_length > payload.size()) {
      std::ostringstream msg;
      msg << where << " needs " << count << " floats but the payload holds "
          << (payload.size() > offset ? (payload.size() - offset) / 4 : 0);
      throw Error(Errc::truncated_payload, msg.str());
    }
    std::vector<float> values(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      values[i] = std::bit_cast<float>(get_u32(payload, offset + 4 * i));
      if (!std::isfinite(values[i]))
        throw Error(Errc::non_finite, where + " payload contains NaN or Inf");
    }
    t.value = Matrix(shape[0], shape[1], std::move(values));
    expected_offset = offset + byte_length;
    c.tensors.push_back(std::move(t));
  }
  if (expected_offset != payload.size()) {
    std::ostringstream msg;
    msg << "payload holds " << payload.size() << " bytes but tensors declare " << expected_offset;
    throw Error(Errc::shape_mismatch, msg.str());
  }
  return c;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(Errc::io, "failed reading '" + path.string() + "'");
  return std::move(buf).str();
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "failed writing '" + path.string() + "'");
}

void write_file(const Container& c, const std::filesystem::path& path) {
  write_bytes(path, encode(c));
}

Container read_file(const std::filesystem::path& path) { return decode(read_bytes(path)); }

}  // namespace mass::mtsv
