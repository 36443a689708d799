#include "osal/rng.hpp"

#include <sstream>

#include "osal/errors.hpp"

namespace osal {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng deserialize_rng(const std::string& state) {
  Rng rng;
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) throw FormatError("invalid rng state");
  return rng;
}

}  // namespace osal
