#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "misground/error.hpp"

namespace misground {

using Affine = std::array<std::array<double, 4>, 4>;

Affine identity_affine();

/// Voxel grid shape plus voxel-index -> world (RAS+ mm) transform.
/// Voxel (i, j, k) lives at i + dims[0] * (j + dims[1] * k).
struct Geometry {
  std::array<std::int64_t, 3> dims{1, 1, 1};
  Affine affine = identity_affine();

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
  }
  /// Throws ValidationError on bad dims, bottom row or a singular 3x3 block.
  void validate() const;

  bool operator==(const Geometry&) const = default;
};

struct Volume {
  Geometry geom;
  std::vector<float> voxels;

  float at(std::int64_t i, std::int64_t j, std::int64_t k) const { return voxels[geom.index(i, j, k)]; }
  bool operator==(const Volume&) const = default;
};

/// Integer structure labels sharing a Volume's geometry; 0 is background.
struct LabelMap {
  Geometry geom;
  std::vector<std::int32_t> labels;
  std::map<std::int32_t, std::string> names;

  std::int32_t at(std::int64_t i, std::int64_t j, std::int64_t k) const { return labels[geom.index(i, j, k)]; }
  std::string name_of(std::int32_t label) const;
  bool operator==(const LabelMap&) const = default;
};

struct ByteVolume {
  Geometry geom;
  std::vector<std::uint8_t> values;
};

enum class SliceDirection { axial, coronal, sagittal };
enum class OrientationMode { ras_storage, standard_view };
enum class PatientAxis { lr = 0, ap = 1, si = 2 };  ///< positive toward R, A, S
enum class ImageAxis { x = 0, y = 1, slice = 2 };  ///< x right, y down, slice index

std::string_view to_string(SliceDirection d);
std::string_view to_string(OrientationMode m);
std::string_view to_string(PatientAxis a);
std::string_view to_string(ImageAxis a);
std::optional<SliceDirection> parse_slice_direction(std::string_view s);
std::optional<OrientationMode> parse_orientation_mode(std::string_view s);
std::optional<PatientAxis> parse_patient_axis(std::string_view s);
std::optional<ImageAxis> parse_image_axis(std::string_view s);

/// Array axis normal to the slice plane in RAS-aligned storage.
int slice_axis_of(SliceDirection d);

// ---------------------------------------------------------------------------
// Reorientation

/// Per-axis direction of index growth for an axis-aligned RAS volume:
/// +1 when index grows toward R/A/S, -1 when toward L/P/I.
using StorageSigns = std::array<int, 3>;

/// Throws ValidationError unless voxel axis i is world axis i (up to sign).
StorageSigns storage_signs(const Affine& affine);

/// Permutes and flips axes (no resampling) so voxel axis i runs along world
/// axis i. With ras_most_origin, every axis is then flipped so index [0,0,0]
/// holds the right-anterior-superior-most corner. Rejects affines whose axes
/// are more than 45 degrees from a coordinate axis.
Volume reorient_to_ras(const Volume& v, bool ras_most_origin = true);
LabelMap reorient_to_ras(const LabelMap& lm, bool ras_most_origin = true);

// ---------------------------------------------------------------------------
// Windowing

struct WindowSpec {
  enum class Kind { percentile, hu_window };
  Kind kind = Kind::hu_window;
  double low_pct = 0.5;
  double high_pct = 99.5;
  double level = 40.0;
  double width = 400.0;

  static WindowSpec percentile(double low = 0.5, double high = 99.5) {
    return {Kind::percentile, low, high, 40.0, 400.0};
  }
  static WindowSpec hu(double level = 40.0, double width = 400.0) { return {Kind::hu_window, 0.5, 99.5, level, width}; }
  void validate() const;
};

/// Linear-interpolated sample percentile (q in [0, 100]).
double percentile(std::vector<float> values, double q);

/// Clip to the window, map linearly to [0, 255] rounding half up. Constant
/// volumes map to all zeros.
ByteVolume apply_window(const Volume& v, const WindowSpec& w);

// ---------------------------------------------------------------------------
// Multi-planar reconstruction

/// Trilinear interpolation at fractional voxel coordinates; 0 outside the grid.
double trilinear_sample(const Volume& v, double fi, double fj, double fk);

/// Resample onto a world-axis-aligned grid covering the source's voxel-centre
/// bounding box. Output axes are ordered (in-plane x, in-plane y, slice normal):
/// axial (R, A, S), coronal (R, S, A), sagittal (A, S, R), each increasing
/// toward +world. `spacing` is in mm in the same order.
Volume resample_mpr(const Volume& v, SliceDirection target, const std::array<double, 3>& spacing);

/// Nearest-neighbour counterpart for label maps, same grid as resample_mpr.
LabelMap resample_mpr_labels(const LabelMap& lm, SliceDirection target, const std::array<double, 3>& spacing);

// ---------------------------------------------------------------------------
// Frames

/// Signed permutation from patient deltas (R, A, S) to image deltas
/// (x right, y down, slice index). Row = image axis, column = patient axis.
struct FrameMapping {
  std::array<std::array<int, 3>, 3> m{};

  std::array<double, 3> apply(const std::array<double, 3>& patient) const;
  /// Patient axis feeding an image axis, and the sign it enters with.
  std::pair<PatientAxis, int> source_of(ImageAxis a) const;
  bool valid() const;
  bool operator==(const FrameMapping&) const = default;
};

/// Standard-view layout for each slice direction, configurable.
struct ViewConvention {
  std::array<FrameMapping, 3> standard;  // indexed by SliceDirection
  static ViewConvention defaults();
};

/// Standard view uses the convention table; RAS storage shows raw array order
/// (image rows follow the lower in-plane array axis, columns the higher one).
FrameMapping frame_mapping(SliceDirection dir, OrientationMode mode, const StorageSigns& signs,
                           const ViewConvention& conv = ViewConvention::defaults());

/// Array axis and flip feeding each image axis of a frame stack.
struct FrameAxes {
  std::array<int, 3> axis{};
  std::array<bool, 3> flip{};
  std::array<std::int64_t, 3> extent{};  // width, height, frame count

  static FrameAxes from(const FrameMapping& mapping, const StorageSigns& signs, const Geometry& geom);

  /// Voxel index -> (x, y, slice) image coordinates; works for fractional input.
  std::array<double, 3> to_image(const std::array<double, 3>& voxel) const;
  std::array<std::int64_t, 3> to_voxel(std::int64_t x, std::int64_t y, std::int64_t slice) const;
};

struct Gray8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::int64_t x, std::int64_t y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const Gray8&) const = default;
};

struct RenderFrame {
  SliceDirection slice_direction = SliceDirection::axial;
  OrientationMode orientation_mode = OrientationMode::standard_view;
  std::int64_t slice_index = 0;
  Gray8 image;
};

/// One frame per slice along `dir`. The volume must already be RAS-aligned.
std::vector<RenderFrame> extract_frames(const Volume& v, OrientationMode mode, SliceDirection dir,
                                        const WindowSpec& w, const ViewConvention& conv = ViewConvention::defaults());
std::vector<RenderFrame> extract_frames(const ByteVolume& v, OrientationMode mode, SliceDirection dir,
                                        const ViewConvention& conv = ViewConvention::defaults());

}  // namespace misground
