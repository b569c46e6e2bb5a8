#include <doctest.h>

#include <cmath>

#include "misground/overlay.hpp"
#include "png_decode.hpp"
#include "semsam/rng.hpp"

using namespace misground;

namespace {

Gray8 gray(std::int64_t w, std::int64_t h, std::uint8_t v) {
  return Gray8{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h), v)};
}

bool is_white(Rgb c) { return c == Rgb{255, 255, 255}; }

}  // namespace

TEST_CASE("no overlays replicates the grayscale frame") {
  Gray8 f{3, 2, {0, 10, 20, 30, 40, 255}};
  RgbImage img = render_frame(f, {}, Background::image);
  for (std::int64_t y = 0; y < 2; ++y)
    for (std::int64_t x = 0; x < 3; ++x) {
      auto g = f.at(x, y);
      CHECK(img.at(x, y) == Rgb{g, g, g});
    }
}

TEST_CASE("bbox on white touches exactly its outline") {
  OverlaySpec o;
  o.kind = PromptKind::bbox;
  o.color_index = 3;
  o.box = {5, 6, 20, 17};
  RgbImage img = render_frame(gray(32, 24, 90), {o}, Background::white);
  for (std::int64_t y = 0; y < 24; ++y)
    for (std::int64_t x = 0; x < 32; ++x) {
      bool inside = x >= 5 && x <= 20 && y >= 6 && y <= 17;
      bool outline = inside && (x <= 6 || x >= 19 || y <= 7 || y >= 16);
      CHECK(!is_white(img.at(x, y)) == outline);
      if (outline) CHECK(img.at(x, y) == kPalette[3]);
    }
}

TEST_CASE("mask tint blends at alpha 0.4 rounding half up") {
  OverlaySpec o;
  o.kind = PromptKind::mask;
  o.color_index = 0;
  o.mask = {1, 0, 0, 0};
  Gray8 f = gray(2, 2, 100);

  RgbImage img = render_frame(f, {o}, Background::image);
  Rgb c = img.at(0, 0);
  auto expect = [](int under, int over) { return static_cast<int>(std::floor(under * 0.6 + over * 0.4 + 0.5 + 1e-9)); };
  CHECK(c.r == expect(100, kPalette[0].r));
  CHECK(c.g == expect(100, kPalette[0].g));
  CHECK(c.b == expect(100, kPalette[0].b));
  CHECK(img.at(1, 0) == Rgb{100, 100, 100});
  CHECK(blend_channel(100, 255, 0.4) == 162);
  CHECK(blend_channel(100, 0, 0.4) == 60);
  for (int u = 0; u < 256; u += 5)
    for (int o2 = 0; o2 < 256; o2 += 7) CHECK(blend_channel(u, o2, 0.4) == expect(u, o2));
}

TEST_CASE("point disc and letter placement") {
  OverlaySpec p;
  p.kind = PromptKind::point;
  p.color_index = 1;
  p.point = {30, 30};
  RgbImage img = render_frame(gray(64, 64, 0), {p}, Background::white);
  int colored = 0;
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x)
      if (!is_white(img.at(x, y))) {
        ++colored;
        CHECK((x - 30) * (x - 30) + (y - 30) * (y - 30) <= 16);
      }
  CHECK(colored == 49);  // lattice points in a radius-4 disc

  p.letter = 'E';
  RgbImage lettered = render_frame(gray(64, 64, 0), {p}, Background::white);
  // glyph of E at scale 3: 15x21 block above the disc's top-left corner
  int glyph_pixels = 0;
  for (const auto& row : glyph('E'))
    for (int c = 0; c < 5; ++c) glyph_pixels += row >> c & 1;
  int extra = 0;
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x)
      if (!is_white(lettered.at(x, y)) && is_white(img.at(x, y))) ++extra;
  CHECK(extra == glyph_pixels * 9);
  CHECK_THROWS_AS(glyph('G'), ValidationError);
}

TEST_CASE("out-of-frame geometry is clamped and noted") {
  OverlaySpec o;
  o.kind = PromptKind::bbox;
  o.box = {-5, 2, 40, 8};
  std::vector<std::string> notes;
  RgbImage img = render_frame(gray(16, 16, 0), {o}, Background::white, {}, &notes);
  CHECK(notes.size() == 1);
  CHECK(!is_white(img.at(0, 5)));
  CHECK(!is_white(img.at(15, 5)));
  auto ext = drawn_extent(o, 16, 16);
  REQUIRE(ext);
  CHECK(*ext == PixelBox{0, 2, 15, 8});
}

TEST_CASE("drawn extent matches rendered pixels") {
  semsam::Xoshiro256 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    OverlaySpec o;
    o.kind = static_cast<PromptKind>(rng.below(3));
    o.color_index = static_cast<int>(rng.below(6));
    std::int64_t w = 40, h = 30;
    o.point = {static_cast<std::int64_t>(rng.below(40)), static_cast<std::int64_t>(rng.below(30))};
    std::int64_t x0 = static_cast<std::int64_t>(rng.below(35)), y0 = static_cast<std::int64_t>(rng.below(25));
    o.box = {x0, y0, x0 + 1 + static_cast<std::int64_t>(rng.below(5)), y0 + 1 + static_cast<std::int64_t>(rng.below(5))};
    o.mask.assign(static_cast<std::size_t>(w * h), 0);
    for (std::int64_t y = o.box.y0; y <= o.box.y1; ++y)
      for (std::int64_t x = o.box.x0; x <= o.box.x1; ++x)
        if (rng.below(2)) o.mask[static_cast<std::size_t>(y * w + x)] = 1;
    o.mask[static_cast<std::size_t>(o.box.y0 * w + o.box.x0)] = 1;

    RgbImage img = render_frame(gray(w, h, 0), {o}, Background::white);
    std::optional<PixelBox> seen;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        if (!is_white(img.at(x, y))) {
          if (!seen) seen = PixelBox{x, y, x, y};
          seen->x0 = std::min(seen->x0, x);
          seen->y0 = std::min(seen->y0, y);
          seen->x1 = std::max(seen->x1, x);
          seen->y1 = std::max(seen->y1, y);
        }
    auto ext = drawn_extent(o, w, h);
    REQUIRE(ext);
    REQUIRE(seen);
    CHECK(std::abs(seen->x0 - ext->x0) <= 1);
    CHECK(std::abs(seen->y0 - ext->y0) <= 1);
    CHECK(std::abs(seen->x1 - ext->x1) <= 1);
    CHECK(std::abs(seen->y1 - ext->y1) <= 1);
  }
}

TEST_CASE("white background hides every source pixel") {
  semsam::Xoshiro256 rng(17);
  Gray8 f{20, 20, {}};
  for (int i = 0; i < 400; ++i) f.pixels.push_back(static_cast<std::uint8_t>(rng.below(200)));
  OverlaySpec o;
  o.kind = PromptKind::mask;
  o.color_index = 2;
  o.mask.assign(400, 0);
  o.mask[210] = 1;
  RgbImage img = render_frame(f, {o}, Background::white);
  for (std::int64_t y = 0; y < 20; ++y)
    for (std::int64_t x = 0; x < 20; ++x)
      if (y * 20 + x != 210) CHECK(is_white(img.at(x, y)));
}

TEST_CASE("PNG encoding") {
  SUBCASE("single red pixel") {
    RgbImage img(1, 1, {255, 0, 0});
    auto bytes = encode_png(img);
    CHECK(bytes[0] == 0x89);
    CHECK(oracle::decode_png(bytes) == img);
  }
  SUBCASE("random grids round trip with stable bytes") {
    semsam::Xoshiro256 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      RgbImage img(1 + static_cast<std::int64_t>(rng.below(40)), 1 + static_cast<std::int64_t>(rng.below(40)));
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
      auto a = encode_png(img);
      CHECK(a == encode_png(img));
      CHECK(oracle::decode_png(a) == img);
    }
  }
  SUBCASE("empty image rejected") { CHECK_THROWS_AS(encode_png(RgbImage(0, 3)), ValidationError); }
}

TEST_CASE("palette names") {
  CHECK(palette_name(0) == "red");
  CHECK(palette_name(5) == "purple");
  CHECK(palette_index("blue") == 3);
  CHECK(!palette_index("magenta"));
  CHECK_THROWS_AS(palette_name(6), ValidationError);
}
