#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "misground/volume.hpp"

namespace misground {

enum class NiftiDatatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

/// Uncompressed single-file NIfTI-1 ("n+1") with sform_code > 0.
/// Scaling (scl_slope / scl_inter) is applied; slope 0 counts as 1.
Volume parse_nifti(const std::filesystem::path& path);
Volume parse_nifti_bytes(std::span<const std::uint8_t> bytes);

/// Label volume: voxel values must be non-negative integers.
LabelMap parse_label_nifti(const std::filesystem::path& path);

/// {"1": "liver", "2": "spleen", ...}
std::map<std::int32_t, std::string> load_label_names(const std::filesystem::path& path);
std::map<std::int32_t, std::string> parse_label_names(std::string_view json_text);

struct NiftiWriteOptions {
  NiftiDatatype datatype = NiftiDatatype::float32;
  bool big_endian = false;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
};

/// Debug writer: stored value = round((v - inter) / slope) for integer types.
std::vector<std::uint8_t> encode_nifti(const Volume& v, const NiftiWriteOptions& opts = {});
void write_nifti(const Volume& v, const std::filesystem::path& path, const NiftiWriteOptions& opts = {});
void write_label_nifti(const LabelMap& lm, const std::filesystem::path& path);

}  // namespace misground
