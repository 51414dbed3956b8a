#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mass {

enum class Errc {
  invalid_argument,
  non_finite,
  dimension_mismatch,
  rank_deficient,
  rank_too_large,
  empty_input,
  unknown_layer,
  unknown_method,
  topology_mismatch,
  io,
  bad_magic,
  version_mismatch,
  truncated_payload,
  shape_mismatch,
  malformed_header,
};

std::string_view to_string(Errc code) noexcept;

// Every failure surfaced by the library carries one of the codes above so
// callers (and the CLI) can branch on the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  Errc code() const noexcept { return code_; }
  // Message without the error-class prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace mass
