#include "uhi/geotiff.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <string>

#include <json.hpp>
#include <zlib.h>

#include "uhi/error.hpp"
#include "uhi/io_util.hpp"

namespace uhi {
namespace {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kImageDescription = 270,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kPredictor = 317,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kExtraSamples = 338,
  kSampleFormat = 339,
  kModelPixelScale = 33550,
  kModelTiepoint = 33922,
  kGeoKeyDirectory = 34735,
  kGdalNodata = 42113,
};

constexpr std::size_t kTypeSize[] = {0, 1, 1, 2, 4, 8, 1, 1, 2, 4, 8, 4, 8};

struct Entry {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t data_offset = 0;  // absolute file offset of the value bytes
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : b_(bytes) {
    if (b_.size() < 8) throw Error(ErrorCode::CorruptFile, "file shorter than TIFF header");
    if (b_[0] == 'I' && b_[1] == 'I') {
      big_ = false;
    } else if (b_[0] == 'M' && b_[1] == 'M') {
      big_ = true;
    } else {
      throw Error(ErrorCode::UnsupportedFormat, "not a TIFF byte-order mark");
    }
    const auto magic = u16(2);
    if (magic == 43) throw Error(ErrorCode::UnsupportedFormat, "BigTIFF is not supported");
    if (magic != 42) throw Error(ErrorCode::UnsupportedFormat, "bad TIFF magic " + std::to_string(magic));
  }

  bool big_endian() const { return big_; }
  std::size_t size() const { return b_.size(); }

  void need(std::size_t off, std::size_t len) const {
    if (off > b_.size() || len > b_.size() - off) {
      throw Error(ErrorCode::CorruptFile, "offset " + std::to_string(off) + " out of bounds");
    }
  }

  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return big_ ? static_cast<std::uint16_t>(b_[off] << 8 | b_[off + 1])
                : static_cast<std::uint16_t>(b_[off + 1] << 8 | b_[off]);
  }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t byte = b_[off + (big_ ? i : 3 - i)];
      v = (v << 8) | byte;
    }
    return v;
  }
  std::uint64_t u64(std::size_t off) const {
    const std::uint64_t hi = u32(big_ ? off : off + 4), lo = u32(big_ ? off + 4 : off);
    return (hi << 32) | lo;
  }
  const std::uint8_t* ptr(std::size_t off) const { return b_.data() + off; }

 private:
  std::span<const std::uint8_t> b_;
  bool big_ = false;
};

class Ifd {
 public:
  Ifd(const Reader& r, std::size_t offset) : r_(r) {
    const std::uint16_t n = r.u16(offset);
    r.need(offset + 2, static_cast<std::size_t>(n) * 12);
    for (std::uint16_t i = 0; i < n; ++i) {
      const std::size_t e = offset + 2 + static_cast<std::size_t>(i) * 12;
      Entry entry;
      entry.type = r.u16(e + 2);
      entry.count = r.u32(e + 4);
      if (entry.type == 0 || entry.type >= std::size(kTypeSize)) continue;  // unknown type: skip
      const std::size_t bytes = kTypeSize[entry.type] * entry.count;
      entry.data_offset = bytes <= 4 ? e + 8 : r.u32(e + 8);
      r.need(entry.data_offset, bytes);
      entries_[r.u16(e)] = entry;
    }
  }

  bool has(std::uint16_t tag) const { return entries_.count(tag) != 0; }

  std::vector<std::uint64_t> uints(std::uint16_t tag) const {
    const Entry& e = at(tag);
    std::vector<std::uint64_t> out(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) {
      switch (e.type) {
        case 1: case 6: case 7: out[i] = *r_.ptr(e.data_offset + i); break;
        case 3: case 8: out[i] = r_.u16(e.data_offset + 2 * i); break;
        case 4: case 9: out[i] = r_.u32(e.data_offset + 4 * i); break;
        default: throw Error(ErrorCode::CorruptFile, "tag " + std::to_string(tag) + " is not integral");
      }
    }
    return out;
  }

  std::uint64_t uint(std::uint16_t tag, std::uint64_t fallback) const {
    if (!has(tag)) return fallback;
    auto v = uints(tag);
    if (v.empty()) throw Error(ErrorCode::CorruptFile, "empty tag " + std::to_string(tag));
    return v.front();
  }

  std::vector<double> doubles(std::uint16_t tag) const {
    const Entry& e = at(tag);
    std::vector<double> out(e.count);
    for (std::uint32_t i = 0; i < e.count; ++i) {
      if (e.type == 12) {
        out[i] = std::bit_cast<double>(r_.u64(e.data_offset + 8 * i));
      } else if (e.type == 11) {
        out[i] = std::bit_cast<float>(r_.u32(e.data_offset + 4 * i));
      } else {
        throw Error(ErrorCode::CorruptFile, "tag " + std::to_string(tag) + " is not floating point");
      }
    }
    return out;
  }

  std::string ascii(std::uint16_t tag) const {
    const Entry& e = at(tag);
    std::string s(reinterpret_cast<const char*>(r_.ptr(e.data_offset)), e.count);
    while (!s.empty() && s.back() == '\0') s.pop_back();
    return s;
  }

 private:
  const Entry& at(std::uint16_t tag) const {
    auto it = entries_.find(tag);
    if (it == entries_.end()) throw Error(ErrorCode::CorruptFile, "missing tag " + std::to_string(tag));
    return it->second;
  }

  const Reader& r_;
  std::map<std::uint16_t, Entry> entries_;
};

enum class SampleType { u8, u16, i16, f32 };

std::vector<std::uint8_t> inflate_chunk(const std::uint8_t* src, std::size_t len, std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw Error(ErrorCode::CorruptFile, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t produced = out.size() - zs.avail_out;
  inflateEnd(&zs);
  // Z_BUF_ERROR with a full buffer means the stream holds trailing padding.
  if (!(rc == Z_STREAM_END || (rc == Z_BUF_ERROR && produced == expected)) || produced != expected) {
    throw Error(ErrorCode::CorruptFile, "deflate chunk decoded to " + std::to_string(produced) +
                                            " bytes, expected " + std::to_string(expected));
  }
  return out;
}

double load_sample(const std::uint8_t* p, SampleType t, bool big) {
  auto rd = [&](int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | p[big ? i : n - 1 - i];
    return v;
  };
  switch (t) {
    case SampleType::u8: return p[0];
    case SampleType::u16: return static_cast<std::uint16_t>(rd(2));
    case SampleType::i16: return static_cast<std::int16_t>(rd(2));
    case SampleType::f32: return std::bit_cast<float>(rd(4));
  }
  return 0.0;
}

// Horizontal differencing (predictor 2) on integer samples, undone in place.
void undo_predictor(std::vector<std::uint8_t>& buf, int row_pixels, int rows, int spp, SampleType t,
                    bool big) {
  if (t == SampleType::f32) throw Error(ErrorCode::UnsupportedFormat, "predictor 2 on float samples");
  const int bps = t == SampleType::u8 ? 1 : 2;
  for (int r = 0; r < rows; ++r) {
    std::uint8_t* row = buf.data() + static_cast<std::size_t>(r) * row_pixels * spp * bps;
    for (int i = spp; i < row_pixels * spp; ++i) {
      if (bps == 1) {
        row[i] = static_cast<std::uint8_t>(row[i] + row[i - spp]);
      } else {
        std::uint8_t* cur = row + 2 * i;
        const std::uint8_t* prev = row + 2 * (i - spp);
        auto get = [&](const std::uint8_t* q) {
          return static_cast<std::uint16_t>(big ? (q[0] << 8 | q[1]) : (q[1] << 8 | q[0]));
        };
        const auto v = static_cast<std::uint16_t>(get(cur) + get(prev));
        if (big) {
          cur[0] = static_cast<std::uint8_t>(v >> 8);
          cur[1] = static_cast<std::uint8_t>(v & 0xff);
        } else {
          cur[1] = static_cast<std::uint8_t>(v >> 8);
          cur[0] = static_cast<std::uint8_t>(v & 0xff);
        }
      }
    }
  }
}

}  // namespace

GeoTiffImage decode_geotiff(std::span<const std::uint8_t> bytes, Units default_units) {
  Reader rd(bytes);
  const std::uint32_t ifd_off = rd.u32(4);
  if (ifd_off < 8 || ifd_off >= rd.size()) {
    throw Error(ErrorCode::CorruptFile, "IFD offset " + std::to_string(ifd_off) + " out of bounds");
  }
  Ifd ifd(rd, ifd_off);

  if (!ifd.has(kImageWidth) || !ifd.has(kImageLength)) {
    throw Error(ErrorCode::CorruptFile, "missing image dimensions");
  }
  const auto width64 = ifd.uint(kImageWidth, 0), height64 = ifd.uint(kImageLength, 0);
  if (width64 == 0 || height64 == 0 || width64 > (1u << 20) || height64 > (1u << 20)) {
    throw Error(ErrorCode::CorruptFile, "implausible image dimensions");
  }
  const int width = static_cast<int>(width64), height = static_cast<int>(height64);
  const int spp = static_cast<int>(ifd.uint(kSamplesPerPixel, 1));
  if (spp < 1 || spp > 8) throw Error(ErrorCode::UnsupportedFormat, "samples per pixel " + std::to_string(spp));

  std::vector<std::uint64_t> bits = ifd.has(kBitsPerSample) ? ifd.uints(kBitsPerSample)
                                                              : std::vector<std::uint64_t>{1};
  std::vector<std::uint64_t> fmts = ifd.has(kSampleFormat) ? ifd.uints(kSampleFormat)
                                                             : std::vector<std::uint64_t>{1};
  for (std::size_t i = 1; i < bits.size(); ++i) {
    if (bits[i] != bits[0]) throw Error(ErrorCode::UnsupportedFormat, "mixed bits per sample");
  }
  for (std::size_t i = 1; i < fmts.size(); ++i) {
    if (fmts[i] != fmts[0]) throw Error(ErrorCode::UnsupportedFormat, "mixed sample formats");
  }
  SampleType st;
  if (bits[0] == 8 && fmts[0] == 1) {
    st = SampleType::u8;
  } else if (bits[0] == 16 && fmts[0] == 1) {
    st = SampleType::u16;
  } else if (bits[0] == 16 && fmts[0] == 2) {
    st = SampleType::i16;
  } else if (bits[0] == 32 && fmts[0] == 3) {
    st = SampleType::f32;
  } else {
    throw Error(ErrorCode::UnsupportedFormat, "sample type bits=" + std::to_string(bits[0]) +
                                                  " format=" + std::to_string(fmts[0]));
  }
  const int bps = static_cast<int>(bits[0] / 8);

  const auto compression = ifd.uint(kCompression, 1);
  const bool deflate = compression == 8 || compression == 32946;
  if (compression != 1 && !deflate) {
    throw Error(ErrorCode::UnsupportedFormat, "compression code " + std::to_string(compression));
  }
  const auto predictor = ifd.uint(kPredictor, 1);
  if (predictor != 1 && predictor != 2) {
    throw Error(ErrorCode::UnsupportedFormat, "predictor " + std::to_string(predictor));
  }
  const auto planar = ifd.uint(kPlanarConfig, 1);
  if (planar != 1 && planar != 2) throw Error(ErrorCode::CorruptFile, "bad planar configuration");
  const int chunk_spp = planar == 1 ? spp : 1;
  const int planes = planar == 1 ? 1 : spp;

  const bool tiled = ifd.has(kTileWidth);
  int cw, ch;  // chunk width/height in pixels
  std::vector<std::uint64_t> offsets, counts;
  if (tiled) {
    cw = static_cast<int>(ifd.uint(kTileWidth, 0));
    ch = static_cast<int>(ifd.uint(kTileLength, 0));
    if (cw <= 0 || ch <= 0) throw Error(ErrorCode::CorruptFile, "bad tile size");
    offsets = ifd.uints(kTileOffsets);
    counts = ifd.uints(kTileByteCounts);
  } else {
    cw = width;
    ch = static_cast<int>(std::min<std::uint64_t>(ifd.uint(kRowsPerStrip, height64), height64));
    if (ch <= 0) throw Error(ErrorCode::CorruptFile, "bad rows per strip");
    offsets = ifd.uints(kStripOffsets);
    counts = ifd.uints(kStripByteCounts);
  }
  const int across = (width + cw - 1) / cw;
  const int down = (height + ch - 1) / ch;
  const std::size_t per_plane = static_cast<std::size_t>(across) * down;
  if (offsets.size() != counts.size() || offsets.size() < per_plane * planes) {
    throw Error(ErrorCode::CorruptFile, "chunk offset/byte-count tables inconsistent");
  }

  std::optional<double> nodata;
  if (ifd.has(kGdalNodata)) {
    const std::string s = ifd.ascii(kGdalNodata);
    try {
      nodata = std::stod(s);
    } catch (const std::exception&) {
      throw Error(ErrorCode::CorruptFile, "unparsable GDAL_NODATA '" + s + "'");
    }
  }

  GeoTiffImage img;
  nlohmann::json annotation;
  if (ifd.has(kImageDescription)) {
    annotation = nlohmann::json::parse(ifd.ascii(kImageDescription), nullptr, false);
    if (annotation.is_discarded() || !annotation.is_object() || !annotation.contains("uhi")) {
      annotation = nullptr;
    } else {
      annotation = annotation["uhi"];
    }
  }

  GeoRef geo;
  if (ifd.has(kModelPixelScale) && ifd.has(kModelTiepoint)) {
    const auto scale = ifd.doubles(kModelPixelScale);
    const auto tie = ifd.doubles(kModelTiepoint);
    if (scale.size() < 2 || tie.size() < 6) throw Error(ErrorCode::CorruptFile, "short georeferencing tags");
    geo.pixel_w = scale[0];
    geo.pixel_h = scale[1];
    geo.origin_x = tie[3] - tie[0] * scale[0];
    geo.origin_y = tie[4] + tie[1] * scale[1];
    if (ifd.has(kGeoKeyDirectory)) {
      const auto keys = ifd.uints(kGeoKeyDirectory);
      for (std::size_t k = 4; k + 3 < keys.size(); k += 4) {
        const auto id = keys[k], loc = keys[k + 1], value = keys[k + 3];
        if (loc != 0) continue;
        if (id == 3072 || (id == 2048 && geo.crs_id.empty())) {
          geo.crs_id = "EPSG:" + std::to_string(value);
        } else if (id == 1025 && value == 2) {  // PixelIsPoint
          geo.origin_x -= geo.pixel_w / 2.0;
          geo.origin_y += geo.pixel_h / 2.0;
        }
      }
    }
  } else {
    img.missing_geo_tags = true;
  }
  if (annotation.is_object() && annotation.contains("crs_id")) {
    geo.crs_id = annotation["crs_id"].get<std::string>();
  }
  if (!(geo.pixel_w > 0.0) || !(geo.pixel_h > 0.0)) {
    throw Error(ErrorCode::CorruptFile, "non-positive pixel scale");
  }

  std::vector<Units> units(static_cast<std::size_t>(spp), default_units);
  img.roles.assign(static_cast<std::size_t>(spp), std::nullopt);
  if (annotation.is_object()) {
    if (annotation.contains("units") && annotation["units"].is_array() &&
        annotation["units"].size() == static_cast<std::size_t>(spp)) {
      for (int s = 0; s < spp; ++s) units[s] = units_from_string(annotation["units"][s].get<std::string>());
    }
    if (annotation.contains("roles") && annotation["roles"].is_array() &&
        annotation["roles"].size() == static_cast<std::size_t>(spp)) {
      for (int s = 0; s < spp; ++s) img.roles[s] = role_from_string(annotation["roles"][s].get<std::string>());
    }
  }
  for (int s = 0; s < spp; ++s) img.grids.emplace_back(width, height, geo, units[s]);

  const std::size_t pixel_bytes = static_cast<std::size_t>(chunk_spp) * bps;
  const std::size_t full_chunk = static_cast<std::size_t>(cw) * ch * pixel_bytes;
  for (int plane = 0; plane < planes; ++plane) {
    for (int cy = 0; cy < down; ++cy) {
      for (int cx = 0; cx < across; ++cx) {
        const std::size_t idx = plane * per_plane + static_cast<std::size_t>(cy) * across + cx;
        const int rows_here = tiled ? ch : std::min(ch, height - cy * ch);
        const std::size_t expected =
            tiled ? full_chunk : static_cast<std::size_t>(cw) * rows_here * pixel_bytes;
        const std::size_t off = offsets[idx], cnt = counts[idx];
        rd.need(off, cnt);
        std::vector<std::uint8_t> raw;
        if (deflate) {
          raw = inflate_chunk(rd.ptr(off), cnt, expected);
        } else {
          if (cnt < expected) {
            throw Error(ErrorCode::CorruptFile, "chunk " + std::to_string(idx) + " holds " +
                                                    std::to_string(cnt) + " bytes, expected " +
                                                    std::to_string(expected));
          }
          raw.assign(rd.ptr(off), rd.ptr(off) + expected);
        }
        if (predictor == 2) undo_predictor(raw, cw, rows_here, chunk_spp, st, rd.big_endian());
        for (int r = 0; r < rows_here; ++r) {
          const int y = cy * ch + r;
          if (y >= height) break;
          for (int c = 0; c < cw; ++c) {
            const int x = cx * cw + c;
            if (x >= width) break;
            const std::uint8_t* px = raw.data() + (static_cast<std::size_t>(r) * cw + c) * pixel_bytes;
            for (int s = 0; s < chunk_spp; ++s) {
              const double v = load_sample(px + s * bps, st, rd.big_endian());
              Grid& g = img.grids[planar == 1 ? s : plane];
              const bool is_nd = !std::isfinite(v) ||
                                 (nodata && (std::isnan(*nodata) ? std::isnan(v) : v == *nodata));
              if (is_nd) {
                g.set_nodata(y, x);
              } else {
                g.set(y, x, v);
              }
            }
          }
        }
      }
    }
  }
  return img;
}

GeoTiffImage read_geotiff(const std::filesystem::path& path, Units default_units) {
  const auto bytes = read_file(path);
  return decode_geotiff(bytes, default_units);
}

BandStack read_geotiff_stack(const std::filesystem::path& path, std::span<const Role> roles,
                             Units default_units) {
  GeoTiffImage img = read_geotiff(path, default_units);
  std::vector<std::pair<Role, Grid>> bands;
  for (std::size_t i = 0; i < img.grids.size(); ++i) {
    Role role;
    if (!roles.empty()) {
      if (roles.size() != img.grids.size()) {
        throw Error(ErrorCode::InvalidArgument, path.string() + ": " + std::to_string(img.grids.size()) +
                                                    " samples but " + std::to_string(roles.size()) +
                                                    " roles given");
      }
      role = roles[i];
    } else if (img.roles[i]) {
      role = *img.roles[i];
    } else {
      throw Error(ErrorCode::InvalidArgument, path.string() + ": no band roles known for sample " +
                                                  std::to_string(i));
    }
    bands.emplace_back(role, std::move(img.grids[i]));
  }
  return align_stack(std::move(bands));
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
  }
  void align() {
    if (out.size() % 2) out.push_back(0);
  }
  std::vector<std::uint8_t> out;
};

struct OutEntry {
  std::uint16_t tag;
  std::uint16_t type;
  std::uint32_t count;
  std::vector<std::uint8_t> payload;  // little-endian value bytes
};

template <typename T>
std::vector<std::uint8_t> le_bytes(const std::vector<T>& vals) {
  Writer w;
  for (const T& v : vals) {
    if constexpr (sizeof(T) == 2) {
      w.u16(static_cast<std::uint16_t>(v));
    } else if constexpr (std::is_same_v<T, double>) {
      w.f64(v);
    } else {
      w.u32(static_cast<std::uint32_t>(v));
    }
  }
  return w.out;
}

}  // namespace

std::vector<std::uint8_t> encode_geotiff(std::span<const Grid> grids, std::span<const Role> roles) {
  if (grids.empty() || grids.size() > 8) {
    throw Error(ErrorCode::InvalidArgument, "geotiff writer takes 1..8 grids");
  }
  if (!roles.empty() && roles.size() != grids.size()) {
    throw Error(ErrorCode::InvalidArgument, "role count does not match grid count");
  }
  for (const Grid& g : grids) {
    if (!g.same_geometry(grids.front())) throw Error(ErrorCode::GeoMismatch, "grids not co-registered");
    g.validate();
  }
  const Grid& g0 = grids.front();
  const auto spp = static_cast<std::uint16_t>(grids.size());
  const std::uint32_t width = static_cast<std::uint32_t>(g0.width());
  const std::uint32_t height = static_cast<std::uint32_t>(g0.height());
  const std::uint32_t row_bytes = width * spp * 4;

  bool any_nodata = false;
  for (const Grid& g : grids) any_nodata = any_nodata || g.nodata_count() > 0;

  nlohmann::json desc;
  desc["uhi"]["units"] = nlohmann::json::array();
  for (const Grid& g : grids) desc["uhi"]["units"].push_back(std::string(to_string(g.units())));
  if (!roles.empty()) {
    desc["uhi"]["roles"] = nlohmann::json::array();
    for (Role r : roles) desc["uhi"]["roles"].push_back(std::string(to_string(r)));
  }
  desc["uhi"]["crs_id"] = g0.georef().crs_id;
  std::string desc_s = desc.dump();

  auto ascii = [](const std::string& s) {
    std::vector<std::uint8_t> v(s.begin(), s.end());
    v.push_back(0);
    return v;
  };

  std::vector<OutEntry> entries;
  entries.push_back({kImageWidth, 4, 1, le_bytes(std::vector<std::uint32_t>{width})});
  entries.push_back({kImageLength, 4, 1, le_bytes(std::vector<std::uint32_t>{height})});
  entries.push_back({kBitsPerSample, 3, spp, le_bytes(std::vector<std::uint16_t>(spp, 32))});
  entries.push_back({kCompression, 3, 1, le_bytes(std::vector<std::uint16_t>{1})});
  entries.push_back({kPhotometric, 3, 1, le_bytes(std::vector<std::uint16_t>{1})});
  entries.push_back({kImageDescription, 2, static_cast<std::uint32_t>(desc_s.size() + 1), ascii(desc_s)});
  entries.push_back({kStripOffsets, 4, height, le_bytes(std::vector<std::uint32_t>(height, 0))});
  entries.push_back({kSamplesPerPixel, 3, 1, le_bytes(std::vector<std::uint16_t>{spp})});
  entries.push_back({kRowsPerStrip, 4, 1, le_bytes(std::vector<std::uint32_t>{1})});
  entries.push_back({kStripByteCounts, 4, height, le_bytes(std::vector<std::uint32_t>(height, row_bytes))});
  entries.push_back({kPlanarConfig, 3, 1, le_bytes(std::vector<std::uint16_t>{1})});
  if (spp > 1) {
    entries.push_back({kExtraSamples, 3, static_cast<std::uint32_t>(spp - 1),
                       le_bytes(std::vector<std::uint16_t>(spp - 1, 0))});
  }
  entries.push_back({kSampleFormat, 3, spp, le_bytes(std::vector<std::uint16_t>(spp, 3))});
  const GeoRef& geo = g0.georef();
  entries.push_back({kModelPixelScale, 12, 3, le_bytes(std::vector<double>{geo.pixel_w, geo.pixel_h, 0.0})});
  entries.push_back({kModelTiepoint, 12, 6,
                     le_bytes(std::vector<double>{0.0, 0.0, 0.0, geo.origin_x, geo.origin_y, 0.0})});
  {
    // GTModelType, GTRasterType = PixelIsArea, plus the EPSG code when known.
    std::vector<std::uint16_t> keys = {1, 1, 0, 2, 1024, 0, 1, 1, 1025, 0, 1, 1};
    if (geo.crs_id.rfind("EPSG:", 0) == 0) {
      try {
        const int code = std::stoi(geo.crs_id.substr(5));
        const bool geographic = code >= 4000 && code < 5000;
        keys[7] = geographic ? 2 : 1;
        keys[3] = 3;
        keys.insert(keys.end(), {static_cast<std::uint16_t>(geographic ? 2048 : 3072), 0, 1,
                                 static_cast<std::uint16_t>(code)});
      } catch (const std::exception&) {
      }
    }
    entries.push_back({kGeoKeyDirectory, 3, static_cast<std::uint32_t>(keys.size()), le_bytes(keys)});
  }
  if (any_nodata) entries.push_back({kGdalNodata, 2, 4, ascii("nan")});

  Writer w;
  w.u8('I');
  w.u8('I');
  w.u16(42);
  w.u32(8);
  const std::size_t ifd_size = 2 + entries.size() * 12 + 4;
  std::size_t cursor = 8 + ifd_size;
  std::vector<std::size_t> payload_at(entries.size(), 0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].payload.size() > 4) {
      cursor += cursor % 2;
      payload_at[i] = cursor;
      cursor += entries[i].payload.size();
    }
  }
  cursor += cursor % 2;
  const std::size_t pixels_at = cursor;
  // Strip offsets are known now; fill the table before emitting it.
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].tag == kStripOffsets) {
      std::vector<std::uint32_t> offs(height);
      for (std::uint32_t r = 0; r < height; ++r) offs[r] = static_cast<std::uint32_t>(pixels_at + r * row_bytes);
      entries[i].payload = le_bytes(offs);
    }
  }

  w.u16(static_cast<std::uint16_t>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const OutEntry& e = entries[i];
    w.u16(e.tag);
    w.u16(e.type);
    w.u32(e.count);
    if (e.payload.size() > 4) {
      w.u32(static_cast<std::uint32_t>(payload_at[i]));
    } else {
      std::vector<std::uint8_t> inl = e.payload;
      inl.resize(4, 0);
      for (auto b : inl) w.u8(b);
    }
  }
  w.u32(0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].payload.size() > 4) {
      while (w.out.size() < payload_at[i]) w.u8(0);
      w.out.insert(w.out.end(), entries[i].payload.begin(), entries[i].payload.end());
    }
  }
  while (w.out.size() < pixels_at) w.u8(0);
  for (std::uint32_t r = 0; r < height; ++r) {
    for (std::uint32_t c = 0; c < width; ++c) {
      for (const Grid& g : grids) {
        const float v = g.is_nodata(static_cast<int>(r), static_cast<int>(c))
                            ? std::numeric_limits<float>::quiet_NaN()
                            : static_cast<float>(g.at(static_cast<int>(r), static_cast<int>(c)));
        w.u32(std::bit_cast<std::uint32_t>(v));
      }
    }
  }
  return w.out;
}

}  // namespace uhi
