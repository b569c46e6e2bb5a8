#pragma once

// Independent reference computations for volume tests. These work from world
// coordinates and textbook formulas rather than the library's axis tables.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "misground/volume.hpp"
#include "semsam/rng.hpp"

namespace oracle {

/// Direct 8-corner weighted sum; 0 outside [0, n-1] on any axis.
inline double trilinear(const misground::Volume& v, double x, double y, double z) {
  const auto& d = v.geom.dims;
  std::array<double, 3> p{x, y, z};
  for (int a = 0; a < 3; ++a)
    if (p[a] < 0.0 || p[a] > static_cast<double>(d[a] - 1)) return 0.0;
  double sum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    std::array<std::int64_t, 3> idx{};
    double w = 1.0;
    for (int a = 0; a < 3; ++a) {
      auto lo = static_cast<std::int64_t>(std::floor(p[a]));
      double t = p[a] - static_cast<double>(lo);
      bool upper = (corner >> a) & 1;
      idx[a] = upper ? lo + 1 : lo;
      w *= upper ? t : 1.0 - t;
      if (idx[a] > d[a] - 1) {
        if (w != 0.0 && t != 0.0) return NAN;
        idx[a] = d[a] - 1;
      }
    }
    if (w != 0.0) sum += w * v.at(idx[0], idx[1], idx[2]);
  }
  return sum;
}

inline std::array<double, 3> world_of(const misground::Geometry& g, std::int64_t i, std::int64_t j, std::int64_t k) {
  std::array<double, 3> w{};
  for (int r = 0; r < 3; ++r) w[r] = g.affine[r][0] * i + g.affine[r][1] * j + g.affine[r][2] * k + g.affine[r][3];
  return w;
}

/// Random signed axis permutation with per-axis spacing and offset.
inline misground::Affine random_axis_affine(semsam::Xoshiro256& rng) {
  std::array<int, 3> perm{0, 1, 2};
  rng.shuffle(std::span<int>(perm));
  misground::Affine a{};
  for (int c = 0; c < 3; ++c) {
    double spacing = 0.5 + 2.0 * rng.uniform01();
    a[perm[c]][c] = rng.below(2) ? spacing : -spacing;
  }
  for (int r = 0; r < 3; ++r) a[r][3] = 100.0 * rng.uniform01() - 50.0;
  a[3][3] = 1.0;
  return a;
}

inline misground::Volume numbered_volume(const misground::Geometry& g) {
  misground::Volume v{g, std::vector<float>(g.voxel_count())};
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i);
  return v;
}

}  // namespace oracle
