#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "misground/volume.hpp"

namespace misground {

/// Ellipsoid "organs" in a body-shaped HU volume, for tests and dry runs.
struct SynthConfig {
  std::array<std::int64_t, 3> dims{32, 32, 32};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  /// Sign of each voxel axis in RAS world space (+1 index grows toward R/A/S).
  std::array<int, 3> axis_signs{1, 1, 1};
  int structures = 10;
  double min_radius = 2.0;
  double max_radius = 5.0;
  std::uint64_t seed = 0;
};

struct SyntheticScan {
  Volume volume;
  LabelMap labels;
};

/// Places up to cfg.structures non-touching ellipsoids; fewer when the grid
/// is too crowded. Structure names come from a built-in anatomy list.
SyntheticScan make_synthetic_scan(const SynthConfig& cfg);

/// Built-in structure name for label id (1-based).
std::string synthetic_structure_name(std::int32_t label);

}  // namespace misground
