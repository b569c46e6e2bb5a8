#include <fmt/format.h>

#include "misground/volume.hpp"

namespace misground {

std::array<double, 3> FrameMapping::apply(const std::array<double, 3>& patient) const {
  std::array<double, 3> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[r] += m[r][c] * patient[c];
  return out;
}

std::pair<PatientAxis, int> FrameMapping::source_of(ImageAxis a) const {
  const auto& row = m[static_cast<int>(a)];
  for (int c = 0; c < 3; ++c)
    if (row[c] != 0) return {static_cast<PatientAxis>(c), row[c]};
  throw ValidationError(fmt::format("frame mapping row {} is empty", to_string(a)));
}

bool FrameMapping::valid() const {
  std::array<int, 3> col_hits{};
  for (const auto& row : m) {
    int hits = 0;
    for (int c = 0; c < 3; ++c) {
      if (row[c] == 0) continue;
      if (row[c] != 1 && row[c] != -1) return false;
      ++hits;
      ++col_hits[c];
    }
    if (hits != 1) return false;
  }
  return col_hits == std::array<int, 3>{1, 1, 1};
}

ViewConvention ViewConvention::defaults() {
  // rows: x (right), y (down), slice; columns: R, A, S
  ViewConvention v;
  // axial: A at top, R at left, slices run inferior -> superior
  v.standard[0].m = {{{-1, 0, 0}, {0, -1, 0}, {0, 0, 1}}};
  // coronal: S at top, R at left, slices run posterior -> anterior
  v.standard[1].m = {{{-1, 0, 0}, {0, 0, -1}, {0, 1, 0}}};
  // sagittal: S at top, A at left, slices run left -> right
  v.standard[2].m = {{{0, -1, 0}, {0, 0, -1}, {1, 0, 0}}};
  return v;
}

FrameMapping frame_mapping(SliceDirection dir, OrientationMode mode, const StorageSigns& signs,
                           const ViewConvention& conv) {
  int s = slice_axis_of(dir);
  if (mode == OrientationMode::standard_view) {
    const FrameMapping& f = conv.standard[static_cast<int>(dir)];
    if (!f.valid()) throw ValidationError(fmt::format("invalid {} view convention", to_string(dir)));
    if (static_cast<int>(f.source_of(ImageAxis::slice).first) != s)
      throw ValidationError(fmt::format("{} view convention must slice along patient axis {}", to_string(dir), s));
    return f;
  }
  // Raw array order: image rows walk the lower in-plane array axis, columns
  // the higher one, slices the remaining axis.
  int a0 = s == 0 ? 1 : 0;
  int a1 = s == 2 ? 1 : 2;
  FrameMapping f;
  f.m[static_cast<int>(ImageAxis::y)][a0] = signs[a0];
  f.m[static_cast<int>(ImageAxis::x)][a1] = signs[a1];
  f.m[static_cast<int>(ImageAxis::slice)][s] = signs[s];
  return f;
}

FrameAxes FrameAxes::from(const FrameMapping& mapping, const StorageSigns& signs, const Geometry& geom) {
  FrameAxes fa;
  for (int r = 0; r < 3; ++r) {
    auto [axis, sign] = mapping.source_of(static_cast<ImageAxis>(r));
    int c = static_cast<int>(axis);
    fa.axis[r] = c;
    fa.flip[r] = sign != signs[c];
    fa.extent[r] = geom.dims[c];
  }
  return fa;
}

std::array<double, 3> FrameAxes::to_image(const std::array<double, 3>& voxel) const {
  std::array<double, 3> out{};
  for (int r = 0; r < 3; ++r) {
    double v = voxel[axis[r]];
    out[r] = flip[r] ? static_cast<double>(extent[r] - 1) - v : v;
  }
  return out;
}

std::array<std::int64_t, 3> FrameAxes::to_voxel(std::int64_t x, std::int64_t y, std::int64_t slice) const {
  std::array<std::int64_t, 3> img{x, y, slice};
  std::array<std::int64_t, 3> out{};
  for (int r = 0; r < 3; ++r) out[axis[r]] = flip[r] ? extent[r] - 1 - img[r] : img[r];
  return out;
}

std::vector<RenderFrame> extract_frames(const ByteVolume& v, OrientationMode mode, SliceDirection dir,
                                        const ViewConvention& conv) {
  StorageSigns signs = storage_signs(v.geom.affine);
  FrameAxes fa = FrameAxes::from(frame_mapping(dir, mode, signs, conv), signs, v.geom);
  std::vector<RenderFrame> frames;
  frames.reserve(static_cast<std::size_t>(fa.extent[2]));
  for (std::int64_t s = 0; s < fa.extent[2]; ++s) {
    RenderFrame f{dir, mode, s, Gray8{fa.extent[0], fa.extent[1], {}}};
    f.image.pixels.resize(static_cast<std::size_t>(fa.extent[0] * fa.extent[1]));
    std::size_t idx = 0;
    for (std::int64_t y = 0; y < fa.extent[1]; ++y)
      for (std::int64_t x = 0; x < fa.extent[0]; ++x) {
        auto n = fa.to_voxel(x, y, s);
        f.image.pixels[idx++] = v.values[v.geom.index(n[0], n[1], n[2])];
      }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<RenderFrame> extract_frames(const Volume& v, OrientationMode mode, SliceDirection dir,
                                        const WindowSpec& w, const ViewConvention& conv) {
  return extract_frames(apply_window(v, w), mode, dir, conv);
}

}  // namespace misground
