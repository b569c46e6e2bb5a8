#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "misground/volume.hpp"

namespace misground {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Six well-separated colours, paired one-to-one with letters A-F.
inline constexpr std::array<Rgb, 6> kPalette{{
    {230, 25, 75},   // red
    {60, 180, 75},   // green
    {255, 225, 25},  // yellow
    {67, 99, 216},   // blue
    {245, 130, 49},  // orange
    {145, 30, 180},  // purple
}};
std::string_view palette_name(int color_index);
std::optional<int> palette_index(std::string_view name);

struct RgbImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  RgbImage() = default;
  RgbImage(std::int64_t w, std::int64_t h, Rgb fill = {});
  Rgb at(std::int64_t x, std::int64_t y) const;
  void set(std::int64_t x, std::int64_t y, Rgb c);
  bool operator==(const RgbImage&) const = default;
};

enum class PromptKind { point, bbox, mask };
std::string_view to_string(PromptKind k);
std::optional<PromptKind> parse_prompt_kind(std::string_view s);

/// Inclusive pixel rectangle.
struct PixelBox {
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool operator==(const PixelBox&) const = default;
};

struct OverlaySpec {
  PromptKind kind = PromptKind::point;
  int color_index = 0;
  std::optional<char> letter;  // 'A'..'F'
  std::array<std::int64_t, 2> point{};  // centre, for points
  PixelBox box;                         // for boxes
  std::vector<std::uint8_t> mask;       // frame-sized bitmap, for masks
};

struct RenderStyle {
  int point_radius = 4;
  int stroke = 2;
  int font_scale = 3;
  double mask_alpha = 0.4;
};

enum class Background { image, white };

/// Draws masks, then boxes, then points, then letters over the frame (or a
/// white canvas of the same size). Geometry outside the frame is clamped and
/// a note is appended to `notes` when given.
RgbImage render_frame(const Gray8& frame, const std::vector<OverlaySpec>& overlays, Background background,
                      const RenderStyle& style = {}, std::vector<std::string>* notes = nullptr);

/// Pixel extent a prompt occupies (letter excluded), after clamping.
std::optional<PixelBox> drawn_extent(const OverlaySpec& o, std::int64_t width, std::int64_t height,
                                     const RenderStyle& style = {});

/// under*(1-alpha) + over*alpha, rounded half up.
std::uint8_t blend_channel(std::uint8_t under, std::uint8_t over, double alpha);

/// 5x7 glyph rows for 'A'..'F'; bit 4 is the leftmost column.
const std::array<std::uint8_t, 7>& glyph(char letter);

/// 8-bit RGB, non-interlaced, filter type 0 on every row, zlib level 9.
std::vector<std::uint8_t> encode_png(const RgbImage& img);
void write_png(const RgbImage& img, const std::filesystem::path& path);

}  // namespace misground
