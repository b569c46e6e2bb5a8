#include "misground/overlay.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <zlib.h>

#include "semsam/bytes.hpp"

namespace misground {

namespace {

constexpr std::array<const char*, 6> kColorNames{"red", "green", "yellow", "blue", "orange", "purple"};

constexpr std::array<std::array<std::uint8_t, 7>, 6> kGlyphs{{
    {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001},  // A
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110},  // B
    {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110},  // C
    {0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110},  // D
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111},  // E
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000},  // F
}};

std::int64_t clamp_to(std::int64_t v, std::int64_t n) { return std::clamp<std::int64_t>(v, 0, n - 1); }

PixelBox clamp_box(PixelBox b, std::int64_t w, std::int64_t h) {
  if (b.x0 > b.x1) std::swap(b.x0, b.x1);
  if (b.y0 > b.y1) std::swap(b.y0, b.y1);
  return {clamp_to(b.x0, w), clamp_to(b.y0, h), clamp_to(b.x1, w), clamp_to(b.y1, h)};
}

std::optional<PixelBox> mask_box(const OverlaySpec& o, std::int64_t w, std::int64_t h) {
  std::optional<PixelBox> box;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (!o.mask[static_cast<std::size_t>(y * w + x)]) continue;
      if (!box) box = PixelBox{x, y, x, y};
      box->x0 = std::min(box->x0, x);
      box->y0 = std::min(box->y0, y);
      box->x1 = std::max(box->x1, x);
      box->y1 = std::max(box->y1, y);
    }
  return box;
}

void draw_letter(RgbImage& img, char letter, std::int64_t x, std::int64_t y, int scale, Rgb color) {
  const auto& rows = glyph(letter);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c) {
      if (!(rows[static_cast<std::size_t>(r)] >> (4 - c) & 1)) continue;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) {
          std::int64_t px = x + c * scale + dx, py = y + r * scale + dy;
          if (px >= 0 && py >= 0 && px < img.width && py < img.height) img.set(px, py, color);
        }
    }
}

// Letter sits just outside the prompt: above its top-left corner, or below
// when there is no room above; always pulled back inside the frame.
std::array<std::int64_t, 2> letter_origin(const PixelBox& ext, std::int64_t w, std::int64_t h, int scale) {
  std::int64_t gw = 5 * scale, gh = 7 * scale;
  std::int64_t x = ext.x0;
  std::int64_t y = ext.y0 - gh - 1;
  if (y < 0) y = ext.y1 + 2;
  if (y + gh > h) y = std::max<std::int64_t>(0, h - gh);
  if (x + gw > w) x = std::max<std::int64_t>(0, w - gw);
  return {x, y};
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  auto be32 = [&](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  be32(static_cast<std::uint32_t>(data.size()));
  std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + start, static_cast<uInt>(out.size() - start));
  be32(static_cast<std::uint32_t>(crc));
}

}  // namespace

std::uint8_t blend_channel(std::uint8_t under, std::uint8_t over, double alpha) {
  double v = under + (static_cast<double>(over) - under) * alpha;
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5 + 1e-9), 0.0, 255.0));
}

std::string_view palette_name(int color_index) {
  if (color_index < 0 || color_index >= static_cast<int>(kColorNames.size()))
    throw ValidationError(fmt::format("color index {} outside the palette", color_index));
  return kColorNames[static_cast<std::size_t>(color_index)];
}

std::optional<int> palette_index(std::string_view name) {
  for (std::size_t i = 0; i < kColorNames.size(); ++i)
    if (name == kColorNames[i]) return static_cast<int>(i);
  return std::nullopt;
}

RgbImage::RgbImage(std::int64_t w, std::int64_t h, Rgb fill) : width(w), height(h) {
  pixels.resize(static_cast<std::size_t>(w * h * 3));
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill.r;
    pixels[i + 1] = fill.g;
    pixels[i + 2] = fill.b;
  }
}

Rgb RgbImage::at(std::int64_t x, std::int64_t y) const {
  auto i = static_cast<std::size_t>((y * width + x) * 3);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(std::int64_t x, std::int64_t y, Rgb c) {
  auto i = static_cast<std::size_t>((y * width + x) * 3);
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::point: return "point";
    case PromptKind::bbox: return "bbox";
    case PromptKind::mask: return "mask";
  }
  return "?";
}

std::optional<PromptKind> parse_prompt_kind(std::string_view s) {
  if (s == "point") return PromptKind::point;
  if (s == "bbox") return PromptKind::bbox;
  if (s == "mask") return PromptKind::mask;
  return std::nullopt;
}

const std::array<std::uint8_t, 7>& glyph(char letter) {
  if (letter < 'A' || letter > 'F') throw ValidationError(fmt::format("no glyph for letter '{}'", letter));
  return kGlyphs[static_cast<std::size_t>(letter - 'A')];
}

std::optional<PixelBox> drawn_extent(const OverlaySpec& o, std::int64_t w, std::int64_t h, const RenderStyle& style) {
  switch (o.kind) {
    case PromptKind::point: {
      std::int64_t cx = clamp_to(o.point[0], w), cy = clamp_to(o.point[1], h), r = style.point_radius;
      return clamp_box({cx - r, cy - r, cx + r, cy + r}, w, h);
    }
    case PromptKind::bbox: return clamp_box(o.box, w, h);
    case PromptKind::mask:
      if (o.mask.size() != static_cast<std::size_t>(w * h)) return std::nullopt;
      return mask_box(o, w, h);
  }
  return std::nullopt;
}

RgbImage render_frame(const Gray8& frame, const std::vector<OverlaySpec>& overlays, Background background,
                      const RenderStyle& style, std::vector<std::string>* notes) {
  const std::int64_t w = frame.width, h = frame.height;
  if (style.point_radius < 0 || style.stroke < 1 || style.font_scale < 1 || !(style.mask_alpha >= 0.0) ||
      style.mask_alpha > 1.0)
    throw ValidationError("invalid render style");

  RgbImage img(w, h, {255, 255, 255});
  if (background == Background::image)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        std::uint8_t g = frame.at(x, y);
        img.set(x, y, {g, g, g});
      }
  if (w == 0 || h == 0) return img;

  auto note = [&](std::string msg) {
    if (notes) notes->push_back(std::move(msg));
  };
  for (const auto& o : overlays) {
    if (o.color_index < 0 || o.color_index >= static_cast<int>(kPalette.size()))
      throw ValidationError(fmt::format("color index {} outside the palette", o.color_index));
    if (o.letter) glyph(*o.letter);
  }

  auto ordered = [&](PromptKind k, auto&& fn) {
    for (const auto& o : overlays)
      if (o.kind == k) fn(o, kPalette[static_cast<std::size_t>(o.color_index)]);
  };

  ordered(PromptKind::mask, [&](const OverlaySpec& o, Rgb c) {
    if (o.mask.size() != static_cast<std::size_t>(w * h)) {
      note(fmt::format("mask of {} pixels does not match a {}x{} frame; skipped", o.mask.size(), w, h));
      return;
    }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        if (!o.mask[static_cast<std::size_t>(y * w + x)]) continue;
        Rgb u = img.at(x, y);
        img.set(x, y, {blend_channel(u.r, c.r, style.mask_alpha), blend_channel(u.g, c.g, style.mask_alpha),
                     blend_channel(u.b, c.b, style.mask_alpha)});
      }
  });

  ordered(PromptKind::bbox, [&](const OverlaySpec& o, Rgb c) {
    PixelBox b = clamp_box(o.box, w, h);
    if (!(b == o.box)) note(fmt::format("box ({},{})-({},{}) clamped to the frame", o.box.x0, o.box.y0, o.box.x1, o.box.y1));
    for (std::int64_t y = b.y0; y <= b.y1; ++y)
      for (std::int64_t x = b.x0; x <= b.x1; ++x) {
        bool edge = x - b.x0 < style.stroke || b.x1 - x < style.stroke || y - b.y0 < style.stroke || b.y1 - y < style.stroke;
        if (edge) img.set(x, y, c);
      }
  });

  ordered(PromptKind::point, [&](const OverlaySpec& o, Rgb c) {
    std::int64_t cx = clamp_to(o.point[0], w), cy = clamp_to(o.point[1], h);
    if (cx != o.point[0] || cy != o.point[1]) note(fmt::format("point ({},{}) clamped to the frame", o.point[0], o.point[1]));
    std::int64_t r = style.point_radius;
    for (std::int64_t y = std::max<std::int64_t>(0, cy - r); y <= std::min(h - 1, cy + r); ++y)
      for (std::int64_t x = std::max<std::int64_t>(0, cx - r); x <= std::min(w - 1, cx + r); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img.set(x, y, c);
  });

  for (const auto& o : overlays) {
    if (!o.letter) continue;
    auto ext = drawn_extent(o, w, h, style);
    if (!ext) continue;
    auto [lx, ly] = letter_origin(*ext, w, h, style.font_scale);
    draw_letter(img, *o.letter, lx, ly, style.font_scale, kPalette[static_cast<std::size_t>(o.color_index)]);
  }
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("PNG needs a non-empty image");
  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

  std::vector<std::uint8_t> ihdr;
  for (std::uint32_t v : {static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height)})
    for (int i = 3; i >= 0; --i) ihdr.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, RGB, deflate, filter 0, no interlace
  put_chunk(out, "IHDR", ihdr);

  const std::size_t row = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve((row + 1) * static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    auto begin = img.pixels.begin() + static_cast<std::ptrdiff_t>(row * static_cast<std::size_t>(y));
    raw.insert(raw.end(), begin, begin + static_cast<std::ptrdiff_t>(row));
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("zlib compression failed");
  packed.resize(packed_size);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
  semsam::bytes::write_file(path, encode_png(img));
}

}  // namespace misground
