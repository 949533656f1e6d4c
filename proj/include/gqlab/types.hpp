#pragma once

#include <cstddef>
#include <variant>

namespace gqlab {

using Action = std::size_t;
using StateIndex = std::size_t;

struct MountainCarState {
  double position = 0.0;
  double velocity = 0.0;

  friend bool operator==(const MountainCarState&, const MountainCarState&) = default;
};

/// Finite environments use an index; Mountain Car carries its continuous pair.
using State = std::variant<StateIndex, MountainCarState>;

}  // namespace gqlab
