#pragma once

// MTSV container: a flat list of named f32 tensors plus topology and a
// free-form string map.
//
//   "MTSV" | u32 LE version | u64 LE header length | JSON header | payload
//
// The JSON header lists each tensor as {name, role, shape, dtype, offset,
// byte_length}; offsets are relative to the first payload byte. The payload is
// little-endian f32, row-major, tensors laid out back to back in list order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mass/matrix.hpp"

namespace mass::mtsv {

inline constexpr std::array<char, 4> kMagic{'M', 'T', 'S', 'V'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

struct Tensor {
  std::string name;
  std::string role;
  Matrix value;

  bool operator==(const Tensor&) const = default;
};

struct Topology {
  std::vector<std::string> layer_order;
  std::vector<std::string> activations;
  std::vector<std::string> heads;

  bool operator==(const Topology&) const = default;
};

struct Container {
  std::vector<Tensor> tensors;
  Topology topology;
  std::map<std::string, std::string> meta;

  // nullptr when absent
  const Tensor* find(std::string_view name, std::string_view role) const;

  bool operator==(const Container&) const = default;
};

std::string encode(const Container& c);
Container decode(std::string_view bytes);

void write_file(const Container& c, const std::filesystem::path& path);
Container read_file(const std::filesystem::path& path);

// Raw file helpers shared with the checkpoint layer.
std::string read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mass::mtsv
