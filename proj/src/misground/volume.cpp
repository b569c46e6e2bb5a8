#include "misground/volume.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace misground {

Affine identity_affine() {
  Affine a{};
  for (int i = 0; i < 4; ++i) a[i][i] = 1.0;
  return a;
}

namespace {

double det3(const Affine& a) {
  return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
         a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

// World axis each voxel axis runs along, and the sign of that run. Throws if
// any axis sits 45 degrees or more off its dominant world axis or two voxel
// axes share one world axis.
struct AxisMap {
  std::array<int, 3> world{};
  std::array<int, 3> sign{};
};

AxisMap axis_map(const Affine& a) {
  constexpr double kMinCos = 0.70710678118654752;
  AxisMap m;
  std::array<bool, 3> used{};
  for (int c = 0; c < 3; ++c) {
    double norm = std::sqrt(a[0][c] * a[0][c] + a[1][c] * a[1][c] + a[2][c] * a[2][c]);
    int best = 0;
    for (int r = 1; r < 3; ++r)
      if (std::abs(a[r][c]) > std::abs(a[best][c])) best = r;
    if (norm == 0.0 || std::abs(a[best][c]) / norm <= kMinCos)
      throw ValidationError(fmt::format(
          "voxel axis {} is oblique (more than 45 degrees from any world axis); resample_mpr the volume first", c));
    if (used[best])
      throw ValidationError("affine maps two voxel axes onto one world axis; resample_mpr the volume first");
    used[best] = true;
    m.world[c] = best;
    m.sign[c] = a[best][c] > 0 ? 1 : -1;
  }
  return m;
}

struct Reorientation {
  Geometry geom;
  // new voxel axis w reads old axis src[w], flipped when flip[w]
  std::array<int, 3> src{};
  std::array<bool, 3> flip{};
};

Reorientation plan_reorientation(const Geometry& g, bool ras_most_origin) {
  g.validate();
  AxisMap m = axis_map(g.affine);
  int want = ras_most_origin ? -1 : 1;

  Reorientation r;
  // old voxel o = P n + b; world = M o + t = (M P) n + (M b + t)
  std::array<std::array<double, 3>, 3> p{};
  std::array<double, 3> b{};
  for (int c = 0; c < 3; ++c) {
    int w = m.world[c];
    bool flip = m.sign[c] != want;
    r.src[w] = c;
    r.flip[w] = flip;
    r.geom.dims[w] = g.dims[c];
    p[c][w] = flip ? -1.0 : 1.0;
    b[c] = flip ? static_cast<double>(g.dims[c] - 1) : 0.0;
  }
  r.geom.affine = identity_affine();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += g.affine[i][k] * p[k][j];
      r.geom.affine[i][j] = s;
    }
    double t = g.affine[i][3];
    for (int k = 0; k < 3; ++k) t += g.affine[i][k] * b[k];
    r.geom.affine[i][3] = t;
  }
  return r;
}

template <typename T>
std::vector<T> permute_voxels(const Geometry& from, const Reorientation& r, const std::vector<T>& in) {
  std::vector<T> out(in.size());
  const auto& d = r.geom.dims;
  std::array<std::int64_t, 3> n{};
  std::array<std::int64_t, 3> o{};
  std::size_t idx = 0;
  for (n[2] = 0; n[2] < d[2]; ++n[2])
    for (n[1] = 0; n[1] < d[1]; ++n[1])
      for (n[0] = 0; n[0] < d[0]; ++n[0]) {
        for (int w = 0; w < 3; ++w) o[r.src[w]] = r.flip[w] ? d[w] - 1 - n[w] : n[w];
        out[idx++] = in[from.index(o[0], o[1], o[2])];
      }
  return out;
}

}  // namespace

void Geometry::validate() const {
  for (int i = 0; i < 3; ++i)
    if (dims[i] < 1) throw ValidationError(fmt::format("dims[{}] = {} must be >= 1", i, dims[i]));
  if (affine[3][0] != 0.0 || affine[3][1] != 0.0 || affine[3][2] != 0.0 || affine[3][3] != 1.0)
    throw ValidationError("affine bottom row must be [0,0,0,1]");
  for (const auto& row : affine)
    for (double v : row)
      if (!std::isfinite(v)) throw ValidationError("affine has a non-finite entry");
  if (det3(affine) == 0.0) throw ValidationError("affine 3x3 block is singular");
}

std::string LabelMap::name_of(std::int32_t label) const {
  auto it = names.find(label);
  return it == names.end() ? fmt::format("label {}", label) : it->second;
}

std::string_view to_string(SliceDirection d) {
  switch (d) {
    case SliceDirection::axial: return "axial";
    case SliceDirection::coronal: return "coronal";
    case SliceDirection::sagittal: return "sagittal";
  }
  return "?";
}

std::string_view to_string(OrientationMode m) {
  return m == OrientationMode::ras_storage ? "ras_storage" : "standard_view";
}

std::string_view to_string(PatientAxis a) {
  switch (a) {
    case PatientAxis::lr: return "lr";
    case PatientAxis::ap: return "ap";
    case PatientAxis::si: return "si";
  }
  return "?";
}

std::string_view to_string(ImageAxis a) {
  switch (a) {
    case ImageAxis::x: return "x";
    case ImageAxis::y: return "y";
    case ImageAxis::slice: return "slice";
  }
  return "?";
}

std::optional<SliceDirection> parse_slice_direction(std::string_view s) {
  if (s == "axial") return SliceDirection::axial;
  if (s == "coronal") return SliceDirection::coronal;
  if (s == "sagittal") return SliceDirection::sagittal;
  return std::nullopt;
}

std::optional<OrientationMode> parse_orientation_mode(std::string_view s) {
  if (s == "ras_storage") return OrientationMode::ras_storage;
  if (s == "standard_view") return OrientationMode::standard_view;
  return std::nullopt;
}

std::optional<PatientAxis> parse_patient_axis(std::string_view s) {
  if (s == "lr") return PatientAxis::lr;
  if (s == "ap") return PatientAxis::ap;
  if (s == "si") return PatientAxis::si;
  return std::nullopt;
}

std::optional<ImageAxis> parse_image_axis(std::string_view s) {
  if (s == "x") return ImageAxis::x;
  if (s == "y") return ImageAxis::y;
  if (s == "slice") return ImageAxis::slice;
  return std::nullopt;
}

int slice_axis_of(SliceDirection d) {
  switch (d) {
    case SliceDirection::axial: return 2;
    case SliceDirection::coronal: return 1;
    case SliceDirection::sagittal: return 0;
  }
  return 2;
}

StorageSigns storage_signs(const Affine& affine) {
  AxisMap m = axis_map(affine);
  for (int c = 0; c < 3; ++c)
    if (m.world[c] != c) throw ValidationError("volume is not RAS-aligned; call reorient_to_ras first");
  return m.sign;
}

Volume reorient_to_ras(const Volume& v, bool ras_most_origin) {
  Reorientation r = plan_reorientation(v.geom, ras_most_origin);
  return Volume{r.geom, permute_voxels(v.geom, r, v.voxels)};
}

LabelMap reorient_to_ras(const LabelMap& lm, bool ras_most_origin) {
  Reorientation r = plan_reorientation(lm.geom, ras_most_origin);
  return LabelMap{r.geom, permute_voxels(lm.geom, r, lm.labels), lm.names};
}

void WindowSpec::validate() const {
  if (kind == Kind::percentile) {
    if (!(low_pct >= 0.0 && high_pct <= 100.0 && low_pct < high_pct))
      throw ValidationError(fmt::format("percentile window needs 0 <= low < high <= 100, got ({}, {})", low_pct, high_pct));
  } else {
    if (!std::isfinite(level) || !(width > 0.0) || !std::isfinite(width))
      throw ValidationError(fmt::format("HU window needs finite level and width > 0, got ({}, {})", level, width));
  }
}

double percentile(std::vector<float> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  lo = std::min(lo, values.size() - 1);
  std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  double a = values[lo];
  double b = a;
  if (hi != lo) b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (b - a) * (pos - static_cast<double>(lo));
}

ByteVolume apply_window(const Volume& v, const WindowSpec& w) {
  w.validate();
  ByteVolume out{v.geom, std::vector<std::uint8_t>(v.voxels.size(), 0)};
  if (v.voxels.empty()) return out;
  auto [mn, mx] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  if (*mn == *mx) return out;

  double lo, hi;
  if (w.kind == WindowSpec::Kind::percentile) {
    lo = percentile(v.voxels, w.low_pct);
    hi = percentile(v.voxels, w.high_pct);
  } else {
    lo = w.level - w.width / 2.0;
    hi = w.level + w.width / 2.0;
  }
  if (!(hi > lo)) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    double x = std::clamp(static_cast<double>(v.voxels[i]), lo, hi);
    out.values[i] = static_cast<std::uint8_t>(std::min(255.0, std::floor((x - lo) * 255.0 / range + 0.5)));
  }
  return out;
}

}  // namespace misground
