#include "misground/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "semsam/bytes.hpp"

namespace misground {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;  // header + empty extension flag

class HeaderView {
 public:
  HeaderView(std::span<const std::uint8_t> b, bool big) : b_(b), big_(big) {}

  std::uint64_t raw(std::size_t off, int n) const {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      std::uint64_t byte = b_[off + static_cast<std::size_t>(i)];
      v |= byte << (8 * (big_ ? n - 1 - i : i));
    }
    return v;
  }
  std::int16_t i16(std::size_t off) const { return static_cast<std::int16_t>(raw(off, 2)); }
  std::int32_t i32(std::size_t off) const { return static_cast<std::int32_t>(raw(off, 4)); }
  float f32(std::size_t off) const { return std::bit_cast<float>(static_cast<std::uint32_t>(raw(off, 4))); }

 private:
  std::span<const std::uint8_t> b_;
  bool big_;
};

class HeaderWriter {
 public:
  explicit HeaderWriter(bool big) : big_(big), b_(kDataOffset, 0) {}

  void put(std::size_t off, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b_[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * (big_ ? n - 1 - i : i)));
  }
  void i16(std::size_t off, std::int16_t v) { put(off, static_cast<std::uint16_t>(v), 2); }
  void i32(std::size_t off, std::int32_t v) { put(off, static_cast<std::uint32_t>(v), 4); }
  void f32(std::size_t off, float v) { put(off, std::bit_cast<std::uint32_t>(v), 4); }
  void text(std::size_t off, std::string_view s) { std::memcpy(b_.data() + off, s.data(), s.size()); }

  std::vector<std::uint8_t>& bytes() { return b_; }

 private:
  bool big_;
  std::vector<std::uint8_t> b_;
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case static_cast<std::int16_t>(NiftiDatatype::uint8): return 1;
    case static_cast<std::int16_t>(NiftiDatatype::int16): return 2;
    case static_cast<std::int16_t>(NiftiDatatype::float32): return 4;
    default: throw FormatError(fmt::format("unsupported datatype {}", datatype));
  }
}

}  // namespace

Volume parse_nifti_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError(fmt::format("truncated header: {} of {} bytes", bytes.size(), kHeaderSize));

  auto dim0_ok = [&](bool big) {
    std::int16_t d = HeaderView(bytes, big).i16(40);
    return d >= 1 && d <= 7;
  };
  bool big = !dim0_ok(false);
  if (big && !dim0_ok(true)) throw FormatError("cannot detect byte order: dim[0] outside [1,7] either way");
  HeaderView h(bytes, big);

  if (h.i32(0) != static_cast<std::int32_t>(kHeaderSize)) throw FormatError(fmt::format("bad sizeof_hdr {}", h.i32(0)));
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) throw FormatError("bad magic: expected single-file \"n+1\"");

  std::int16_t datatype = h.i16(70);
  int width = bytes_per_voxel(datatype);

  int ndim = h.i16(40);
  Geometry g;
  for (int i = 1; i <= 7; ++i) {
    std::int64_t d = i <= ndim ? h.i16(40 + 2 * static_cast<std::size_t>(i)) : 1;
    if (d < 1) throw FormatError(fmt::format("dim[{}] = {} must be >= 1", i, d));
    if (i <= 3)
      g.dims[i - 1] = d;
    else if (d != 1)
      throw FormatError(fmt::format("dim[{}] = {}: only 3D volumes are supported", i, d));
  }

  std::int16_t sform = h.i16(254);
  if (sform <= 0) throw FormatError("sform_code is 0: qform-only orientation is not accepted");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) g.affine[r][c] = h.f32(280 + 16 * static_cast<std::size_t>(r) + 4 * static_cast<std::size_t>(c));
  g.affine[3] = {0.0, 0.0, 0.0, 1.0};
  g.validate();

  float vox_offset = h.f32(108);
  if (!(vox_offset >= static_cast<float>(kHeaderSize)) || vox_offset != std::floor(vox_offset))
    throw FormatError(fmt::format("bad vox_offset {}", vox_offset));
  auto off = static_cast<std::size_t>(vox_offset);
  std::size_t count = g.voxel_count();
  std::size_t need = off + count * static_cast<std::size_t>(width);
  if (bytes.size() < need)
    throw FormatError(fmt::format("truncated data section: need {} bytes, file has {}", need, bytes.size()));

  float slope = h.f32(112);
  float inter = h.f32(116);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;
  if (!std::isfinite(inter)) inter = 0.0f;

  Volume v{g, std::vector<float>(count)};
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t at = off + i * static_cast<std::size_t>(width);
    double raw;
    switch (width) {
      case 1: raw = bytes[at]; break;
      case 2: raw = h.i16(at); break;
      default: raw = h.f32(at); break;
    }
    double val = raw * static_cast<double>(slope) + static_cast<double>(inter);
    if (!std::isfinite(val)) throw FormatError(fmt::format("non-finite voxel at index {}", i));
    v.voxels[i] = static_cast<float>(val);
  }
  return v;
}

Volume parse_nifti(const std::filesystem::path& path) {
  auto bytes = semsam::bytes::read_file(path);
  try {
    return parse_nifti_bytes(bytes);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

LabelMap parse_label_nifti(const std::filesystem::path& path) {
  Volume v = parse_nifti(path);
  LabelMap lm{v.geom, std::vector<std::int32_t>(v.voxels.size()), {}};
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    float x = v.voxels[i];
    if (x < 0.0f || x != std::floor(x) || x > static_cast<float>(std::numeric_limits<std::int32_t>::max()))
      throw FormatError(fmt::format("{}: label voxel {} has non-label value {}", path.string(), i, x));
    lm.labels[i] = static_cast<std::int32_t>(x);
  }
  return lm;
}

std::map<std::int32_t, std::string> parse_label_names(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("label names: {}", e.what()));
  }
  if (!j.is_object()) throw FormatError("label names must be a JSON object of \"id\": \"name\"");
  std::map<std::int32_t, std::string> out;
  for (auto& [k, val] : j.items()) {
    std::size_t used = 0;
    long id = -1;
    try {
      id = std::stol(k, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != k.size() || id <= 0 || id > std::numeric_limits<std::int32_t>::max())
      throw FormatError(fmt::format("label names: key \"{}\" is not a positive label id", k));
    if (!val.is_string() || val.get<std::string>().empty())
      throw FormatError(fmt::format("label names: label {} needs a non-empty string name", k));
    out[static_cast<std::int32_t>(id)] = val.get<std::string>();
  }
  return out;
}

std::map<std::int32_t, std::string> load_label_names(const std::filesystem::path& path) {
  return parse_label_names(semsam::bytes::read_text_file(path));
}

std::vector<std::uint8_t> encode_nifti(const Volume& v, const NiftiWriteOptions& opts) {
  v.geom.validate();
  if (v.voxels.size() != v.geom.voxel_count()) throw ValidationError("voxel count does not match dims");
  for (int i = 0; i < 3; ++i)
    if (v.geom.dims[i] > std::numeric_limits<std::int16_t>::max())
      throw ValidationError(fmt::format("dims[{}] = {} exceeds the NIfTI-1 limit", i, v.geom.dims[i]));
  if (opts.scl_slope == 0.0f) throw ValidationError("scl_slope must be non-zero");

  auto dt = static_cast<std::int16_t>(opts.datatype);
  int width = bytes_per_voxel(dt);

  HeaderWriter h(opts.big_endian);
  h.i32(0, static_cast<std::int32_t>(kHeaderSize));
  h.i16(40, 3);
  for (int i = 0; i < 3; ++i) h.i16(42 + 2 * static_cast<std::size_t>(i), static_cast<std::int16_t>(v.geom.dims[i]));
  for (int i = 3; i < 7; ++i) h.i16(42 + 2 * static_cast<std::size_t>(i), 1);
  h.i16(70, dt);
  h.i16(72, static_cast<std::int16_t>(width * 8));
  h.f32(76, 1.0f);
  for (int c = 0; c < 3; ++c) {
    const auto& a = v.geom.affine;
    double n = std::sqrt(a[0][c] * a[0][c] + a[1][c] * a[1][c] + a[2][c] * a[2][c]);
    h.f32(80 + 4 * static_cast<std::size_t>(c), static_cast<float>(n));
  }
  h.f32(108, static_cast<float>(kDataOffset));
  h.f32(112, opts.scl_slope);
  h.f32(116, opts.scl_inter);
  h.i16(254, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      h.f32(280 + 16 * static_cast<std::size_t>(r) + 4 * static_cast<std::size_t>(c), static_cast<float>(v.geom.affine[r][c]));
  h.text(344, std::string_view("n+1\0", 4));

  auto& out = h.bytes();
  out.resize(kDataOffset + v.voxels.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    std::size_t at = kDataOffset + i * static_cast<std::size_t>(width);
    if (width == 4) {
      h.f32(at, opts.scl_slope == 1.0f && opts.scl_inter == 0.0f
                     ? v.voxels[i]
                     : static_cast<float>((static_cast<double>(v.voxels[i]) - opts.scl_inter) / opts.scl_slope));
      continue;
    }
    double stored = std::round((static_cast<double>(v.voxels[i]) - opts.scl_inter) / opts.scl_slope);
    double lo = width == 1 ? 0.0 : std::numeric_limits<std::int16_t>::min();
    double hi = width == 1 ? 255.0 : std::numeric_limits<std::int16_t>::max();
    if (!(stored >= lo && stored <= hi))
      throw ValidationError(fmt::format("voxel {} value {} does not fit datatype {}", i, v.voxels[i], dt));
    if (width == 1)
      out[at] = static_cast<std::uint8_t>(stored);
    else
      h.i16(at, static_cast<std::int16_t>(stored));
  }
  return std::move(out);
}

void write_nifti(const Volume& v, const std::filesystem::path& path, const NiftiWriteOptions& opts) {
  semsam::bytes::write_file(path, encode_nifti(v, opts));
}

void write_label_nifti(const LabelMap& lm, const std::filesystem::path& path) {
  Volume v{lm.geom, std::vector<float>(lm.labels.begin(), lm.labels.end())};
  bool fits16 = true;
  for (auto l : lm.labels) fits16 = fits16 && l <= std::numeric_limits<std::int16_t>::max();
  NiftiWriteOptions opts;
  opts.datatype = fits16 ? NiftiDatatype::int16 : NiftiDatatype::float32;
  write_nifti(v, path, opts);
}

}  // namespace misground
