#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "misground/volume.hpp"

namespace misground {

namespace {

constexpr double kSnap = 1e-9;

// Clamp coordinates that miss a grid edge by rounding noise back onto it.
bool to_grid(double& f, std::int64_t n) {
  if (f < 0.0) {
    if (f < -kSnap) return false;
    f = 0.0;
  }
  double last = static_cast<double>(n - 1);
  if (f > last) {
    if (f > last + kSnap) return false;
    f = last;
  }
  double r = std::round(f);
  if (std::abs(f - r) <= kSnap) f = r;
  return true;
}

std::array<int, 3> world_order(SliceDirection d) {
  switch (d) {
    case SliceDirection::axial: return {0, 1, 2};
    case SliceDirection::coronal: return {0, 2, 1};
    case SliceDirection::sagittal: return {1, 2, 0};
  }
  return {0, 1, 2};
}

struct Inverse {
  std::array<std::array<double, 3>, 3> m{};
  std::array<double, 3> t{};

  std::array<double, 3> apply(const std::array<double, 3>& w) const {
    std::array<double, 3> d{w[0] - t[0], w[1] - t[1], w[2] - t[2]};
    std::array<double, 3> out{};
    for (int i = 0; i < 3; ++i) out[i] = m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2];
    return out;
  }
};

Inverse invert(const Affine& a) {
  const auto& m = a;
  double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Inverse inv;
  inv.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  inv.t = {m[0][3], m[1][3], m[2][3]};
  return inv;
}

struct MprGrid {
  Geometry geom;
  std::array<int, 3> order{};
  std::array<double, 3> origin{};  // world mm of output voxel 0 along each world axis
  std::array<double, 3> spacing{};
};

MprGrid plan_grid(const Geometry& src, SliceDirection target, const std::array<double, 3>& spacing) {
  src.validate();
  for (int i = 0; i < 3; ++i)
    if (!(spacing[i] > 0.0) || !std::isfinite(spacing[i]))
      throw ValidationError(fmt::format("MPR spacing must be positive, got {}", spacing[i]));

  std::array<double, 3> lo{}, hi{};
  lo.fill(INFINITY);
  hi.fill(-INFINITY);
  for (int corner = 0; corner < 8; ++corner) {
    std::array<double, 3> v{};
    for (int a = 0; a < 3; ++a) v[a] = (corner >> a & 1) ? static_cast<double>(src.dims[a] - 1) : 0.0;
    for (int r = 0; r < 3; ++r) {
      double w = src.affine[r][3];
      for (int a = 0; a < 3; ++a) w += src.affine[r][a] * v[a];
      lo[r] = std::min(lo[r], w);
      hi[r] = std::max(hi[r], w);
    }
  }

  MprGrid g;
  g.order = world_order(target);
  g.geom.affine = Affine{};
  g.geom.affine[3][3] = 1.0;
  for (int q = 0; q < 3; ++q) {
    int w = g.order[q];
    double extent = hi[w] - lo[w];
    g.geom.dims[q] = static_cast<std::int64_t>(std::floor(extent / spacing[q] + 1e-9)) + 1;
    g.origin[w] = lo[w];
    g.spacing[q] = spacing[q];
    g.geom.affine[w][q] = spacing[q];
    g.geom.affine[w][3] = lo[w];
  }
  return g;
}

template <typename Fn>
void for_each_output(const MprGrid& g, const Inverse& inv, Fn&& fn) {
  const auto& d = g.geom.dims;
  std::size_t idx = 0;
  std::array<double, 3> world{};
  for (std::int64_t c = 0; c < d[2]; ++c)
    for (std::int64_t b = 0; b < d[1]; ++b)
      for (std::int64_t a = 0; a < d[0]; ++a) {
        std::array<std::int64_t, 3> n{a, b, c};
        for (int q = 0; q < 3; ++q)
          world[g.order[q]] = g.origin[g.order[q]] + static_cast<double>(n[q]) * g.spacing[q];
        fn(idx++, inv.apply(world));
      }
}

}  // namespace

double trilinear_sample(const Volume& v, double fi, double fj, double fk) {
  const auto& d = v.geom.dims;
  if (!to_grid(fi, d[0]) || !to_grid(fj, d[1]) || !to_grid(fk, d[2])) return 0.0;
  std::int64_t i0 = static_cast<std::int64_t>(std::floor(fi));
  std::int64_t j0 = static_cast<std::int64_t>(std::floor(fj));
  std::int64_t k0 = static_cast<std::int64_t>(std::floor(fk));
  double ti = fi - static_cast<double>(i0);
  double tj = fj - static_cast<double>(j0);
  double tk = fk - static_cast<double>(k0);
  std::int64_t i1 = std::min(i0 + 1, d[0] - 1);
  std::int64_t j1 = std::min(j0 + 1, d[1] - 1);
  std::int64_t k1 = std::min(k0 + 1, d[2] - 1);

  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return static_cast<double>(v.at(i, j, k)); };
  double c00 = at(i0, j0, k0) * (1 - ti) + at(i1, j0, k0) * ti;
  double c10 = at(i0, j1, k0) * (1 - ti) + at(i1, j1, k0) * ti;
  double c01 = at(i0, j0, k1) * (1 - ti) + at(i1, j0, k1) * ti;
  double c11 = at(i0, j1, k1) * (1 - ti) + at(i1, j1, k1) * ti;
  double c0 = c00 * (1 - tj) + c10 * tj;
  double c1 = c01 * (1 - tj) + c11 * tj;
  return c0 * (1 - tk) + c1 * tk;
}

Volume resample_mpr(const Volume& v, SliceDirection target, const std::array<double, 3>& spacing) {
  MprGrid g = plan_grid(v.geom, target, spacing);
  Inverse inv = invert(v.geom.affine);
  Volume out{g.geom, std::vector<float>(g.geom.voxel_count(), 0.0f)};
  for_each_output(g, inv, [&](std::size_t idx, const std::array<double, 3>& f) {
    out.voxels[idx] = static_cast<float>(trilinear_sample(v, f[0], f[1], f[2]));
  });
  return out;
}

LabelMap resample_mpr_labels(const LabelMap& lm, SliceDirection target, const std::array<double, 3>& spacing) {
  MprGrid g = plan_grid(lm.geom, target, spacing);
  Inverse inv = invert(lm.geom.affine);
  LabelMap out{g.geom, std::vector<std::int32_t>(g.geom.voxel_count(), 0), lm.names};
  const auto& d = lm.geom.dims;
  for_each_output(g, inv, [&](std::size_t idx, std::array<double, 3> f) {
    std::array<std::int64_t, 3> n{};
    for (int a = 0; a < 3; ++a) {
      if (!to_grid(f[a], d[a])) return;
      n[a] = static_cast<std::int64_t>(std::floor(f[a] + 0.5));
    }
    out.labels[idx] = lm.at(n[0], n[1], n[2]);
  });
  return out;
}

}  // namespace misground
