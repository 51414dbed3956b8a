#include "mass/error.hpp"

namespace mass {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::non_finite: return "non-finite value";
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::rank_deficient: return "rank deficient";
    case Errc::rank_too_large: return "rank too large";
    case Errc::empty_input: return "empty input";
    case Errc::unknown_layer: return "unknown layer";
    case Errc::unknown_method: return "unknown method";
    case Errc::topology_mismatch: return "topology mismatch";
    case Errc::io: return "i/o error";
    case Errc::bad_magic: return "bad magic";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::truncated_payload: return "truncated payload";
    case Errc::shape_mismatch: return "shape/offset inconsistency";
    case Errc::malformed_header: return "malformed header";
  }
  return "unknown error";
}

}  // namespace mass
