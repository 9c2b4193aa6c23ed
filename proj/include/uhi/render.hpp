#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhi/raster.hpp"

namespace uhi {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

enum class Palette { thermal, diverging };

std::string_view to_string(Palette p);
Palette palette_from_string(std::string_view s);

// Piecewise-linear ramp through evenly spaced anchors; t clamped to [0, 1].
Rgb palette_color(Palette p, double t);
const std::vector<Rgb>& palette_anchors(Palette p);

struct ColorMapSpec {
  Palette palette = Palette::thermal;
  double min_c = 0.0;
  double max_c = 40.0;
  Rgb nodata{128, 128, 128};

  void validate() const;  // min_c < max_c
};

nlohmann::json to_json(const ColorMapSpec& s);
ColorMapSpec colormap_from_json(const nlohmann::json& j);

// Range over the valid pixels of the grids; symmetric about 0 for the
// diverging palette. Degenerate ranges are widened by 0.5 on each side.
ColorMapSpec auto_colormap(Palette palette, std::span<const Grid* const> grids);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major RGB triplets
  Rgb pixel(int row, int col) const;
};

RgbImage render_map(const Grid& grid, const ColorMapSpec& spec);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

// Minimal reader for the PNGs produced by encode_png (8-bit RGB, no
// interlace); used to verify exports.
RgbImage decode_png(std::span<const std::uint8_t> bytes);

}  // namespace uhi
