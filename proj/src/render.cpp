#include "uhi/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <zlib.h>

#include "uhi/error.hpp"

namespace uhi {

std::string_view to_string(Palette p) { return p == Palette::thermal ? "thermal" : "diverging"; }

Palette palette_from_string(std::string_view s) {
  if (s == "thermal") return Palette::thermal;
  if (s == "diverging") return Palette::diverging;
  throw Error(ErrorCode::InvalidArgument, "unknown palette '" + std::string(s) + "'");
}

const std::vector<Rgb>& palette_anchors(Palette p) {
  // inferno-like thermal ramp; blue-white-red diverging ramp
  static const std::vector<Rgb> thermal = {{0, 0, 4}, {87, 15, 109}, {187, 55, 84}, {249, 142, 8}, {252, 255, 164}};
  static const std::vector<Rgb> diverging = {{33, 102, 172}, {247, 247, 247}, {178, 24, 43}};
  return p == Palette::thermal ? thermal : diverging;
}

Rgb palette_color(Palette p, double t) {
  const auto& a = palette_anchors(p);
  if (!(t > 0.0)) return a.front();
  if (t >= 1.0) return a.back();
  const double x = t * static_cast<double>(a.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(x));
  const double f = x - static_cast<double>(i);
  if (f == 0.0) return a[i];
  auto mix = [f](std::uint8_t lo, std::uint8_t hi) {
    return static_cast<std::uint8_t>(std::lround(lo + (static_cast<double>(hi) - lo) * f));
  };
  return {mix(a[i].r, a[i + 1].r), mix(a[i].g, a[i + 1].g), mix(a[i].b, a[i + 1].b)};
}

void ColorMapSpec::validate() const {
  if (!std::isfinite(min_c) || !std::isfinite(max_c) || !(min_c < max_c)) {
    throw Error(ErrorCode::InvalidArgument, "color map needs finite min_c < max_c");
  }
}

nlohmann::json to_json(const ColorMapSpec& s) {
  return {{"palette", to_string(s.palette)},
          {"min_c", s.min_c},
          {"max_c", s.max_c},
          {"nodata", {s.nodata.r, s.nodata.g, s.nodata.b}}};
}

ColorMapSpec colormap_from_json(const nlohmann::json& j) {
  ColorMapSpec s;
  if (j.contains("palette")) s.palette = palette_from_string(j["palette"].get<std::string>());
  s.min_c = j.value("min_c", s.min_c);
  s.max_c = j.value("max_c", s.max_c);
  if (j.contains("nodata")) {
    const auto& n = j["nodata"];
    s.nodata = {n.at(0).get<std::uint8_t>(), n.at(1).get<std::uint8_t>(), n.at(2).get<std::uint8_t>()};
  }
  s.validate();
  return s;
}

ColorMapSpec auto_colormap(Palette palette, std::span<const Grid* const> grids) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const Grid* g : grids) {
    for (std::size_t i = 0; i < g->size(); ++i) {
      if (g->is_nodata(i)) continue;
      lo = std::min(lo, (*g)[i]);
      hi = std::max(hi, (*g)[i]);
    }
  }
  ColorMapSpec s;
  s.palette = palette;
  if (lo > hi) {
    lo = 0.0;
    hi = 0.0;
  }
  if (palette == Palette::diverging) {
    const double m = std::max(std::abs(lo), std::abs(hi));
    lo = -m;
    hi = m;
  }
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  s.min_c = lo;
  s.max_c = hi;
  return s;
}

Rgb RgbImage::pixel(int row, int col) const {
  const std::size_t i = (static_cast<std::size_t>(row) * width + col) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

RgbImage render_map(const Grid& grid, const ColorMapSpec& spec) {
  spec.validate();
  RgbImage img{grid.width(), grid.height(), {}};
  img.rgb.reserve(grid.size() * 3);
  const double span = spec.max_c - spec.min_c;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Rgb c = grid.is_nodata(i) ? spec.nodata : palette_color(spec.palette, (grid[i] - spec.min_c) / span);
    img.rgb.push_back(c.r);
    img.rgb.push_back(c.g);
    img.rgb.push_back(c.b);
  }
  return img;
}

namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, std::span<const std::uint8_t> data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.width < 1 || img.height < 1 || img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw Error(ErrorCode::InvalidArgument, "image buffer does not match its dimensions");
  }
  std::vector<std::uint8_t> raw;
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  raw.reserve((stride + 1) * img.height);
  for (int r = 0; r < img.height; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(r * stride),
               img.rgb.begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error(ErrorCode::IoError, "zlib compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> out(std::begin(kPngSig), std::end(kPngSig));
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit truecolor
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  auto corrupt = [](const std::string& m) { return Error(ErrorCode::CorruptFile, "png: " + m); };
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0) throw corrupt("bad signature");
  RgbImage img;
  std::vector<std::uint8_t> z;
  std::size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t len = get_u32be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw corrupt("truncated chunk");
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    if (crc32(0L, bytes.data() + pos + 4, len + 4) != get_u32be(data + len)) throw corrupt("crc mismatch");
    if (type == "IHDR") {
      img.width = static_cast<int>(get_u32be(data));
      img.height = static_cast<int>(get_u32be(data + 4));
      if (data[8] != 8 || data[9] != 2 || data[12] != 0) throw corrupt("only 8-bit RGB, non-interlaced");
    } else if (type == "IDAT") {
      z.insert(z.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  uLongf rawlen = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &rawlen, z.data(), static_cast<uLong>(z.size())) != Z_OK || rawlen != raw.size()) {
    throw corrupt("bad image data");
  }
  img.rgb.resize(stride * img.height);
  for (int r = 0; r < img.height; ++r) {
    const std::uint8_t* line = raw.data() + r * (stride + 1);
    if (line[0] != 0) throw corrupt("unsupported filter");
    std::memcpy(img.rgb.data() + r * stride, line + 1, stride);
  }
  return img;
}

}  // namespace uhi
