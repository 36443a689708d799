#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>

#include <Eigen/Core>

namespace osal {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Opaque sample identifier. Ordering is used for every tie-break.
struct SampleId {
  std::uint64_t value = 0;

  constexpr SampleId() = default;
  constexpr explicit SampleId(std::uint64_t v) : value(v) {}
  constexpr auto operator<=>(const SampleId&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, SampleId id) { return os << id.value; }

using ClassIndex = int;

}  // namespace osal

template <>
struct std::hash<osal::SampleId> {
  std::size_t operator()(osal::SampleId id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
