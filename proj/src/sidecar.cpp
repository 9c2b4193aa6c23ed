#include "uhi/sidecar.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "uhi/error.hpp"
#include "uhi/geotiff.hpp"
#include "uhi/io_util.hpp"

namespace uhi {

std::filesystem::path sidecar_base(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".bin" || ext == ".json") {
    auto base = path;
    base.replace_extension();
    return base;
  }
  return path;
}

nlohmann::json georef_to_json(const GeoRef& g) {
  return {{"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"pixel_w", g.pixel_w},
          {"pixel_h", g.pixel_h},   {"crs_id", g.crs_id}};
}

GeoRef georef_from_json(const nlohmann::json& j) {
  GeoRef g;
  g.origin_x = j.at("origin_x").get<double>();
  g.origin_y = j.at("origin_y").get<double>();
  g.pixel_w = j.at("pixel_w").get<double>();
  g.pixel_h = j.at("pixel_h").get<double>();
  g.crs_id = j.value("crs_id", std::string());
  g.validate();
  return g;
}

void write_sidecar(const std::filesystem::path& path, std::span<const Grid> grids,
                   std::span<const Role> roles, const nlohmann::json& meta) {
  if (grids.empty()) throw Error(ErrorCode::InvalidArgument, "sidecar needs at least one grid");
  if (!roles.empty() && roles.size() != grids.size()) {
    throw Error(ErrorCode::InvalidArgument, "role count does not match grid count");
  }
  const Grid& g0 = grids.front();
  for (const Grid& g : grids) {
    if (!g.same_geometry(g0)) throw Error(ErrorCode::GeoMismatch, "sidecar grids not co-registered");
    g.validate();
  }
  const auto base = sidecar_base(path);

  std::vector<std::uint8_t> bin;
  bin.reserve(grids.size() * g0.size() * 4);
  for (const Grid& g : grids) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float v = g.is_nodata(i) ? std::numeric_limits<float>::quiet_NaN() : static_cast<float>(g[i]);
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) bin.push_back(static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff));
    }
  }

  nlohmann::json h;
  h["format"] = "uhi-sidecar";
  h["width"] = g0.width();
  h["height"] = g0.height();
  h["bands"] = grids.size();
  h["georef"] = georef_to_json(g0.georef());
  if (grids.size() == 1) {
    h["units"] = std::string(to_string(g0.units()));
  } else {
    h["units"] = nlohmann::json::array();
    for (const Grid& g : grids) h["units"].push_back(std::string(to_string(g.units())));
  }
  h["nodata"] = "nan";
  h["roles"] = nlohmann::json::array();
  for (Role r : roles) h["roles"].push_back(std::string(to_string(r)));
  h["dtype"] = "float32";
  h["byte_order"] = "little";
  if (!meta.is_null()) h["meta"] = meta;

  auto bin_path = base;
  bin_path += ".bin";
  auto json_path = base;
  json_path += ".json";
  write_atomic(bin_path, bin);
  write_atomic(json_path, h.dump(2));
}

SidecarRaster read_sidecar(const std::filesystem::path& path) {
  const auto base = sidecar_base(path);
  auto bin_path = base;
  bin_path += ".bin";
  auto json_path = base;
  json_path += ".json";
  SidecarRaster out;
  out.header = nlohmann::json::parse(read_text(json_path), nullptr, false);
  if (out.header.is_discarded()) throw Error(ErrorCode::CorruptFile, json_path.string() + " is not JSON");
  const auto bin = read_file(bin_path);
  try {
    const int w = out.header.at("width").get<int>();
    const int h = out.header.at("height").get<int>();
    const auto n = out.header.at("bands").get<std::size_t>();
    const GeoRef geo = georef_from_json(out.header.at("georef"));
    const std::size_t px = static_cast<std::size_t>(w) * h;
    if (bin.size() != n * px * 4) {
      throw Error(ErrorCode::CorruptFile, bin_path.string() + " size does not match header");
    }
    std::vector<Units> units;
    const auto& ju = out.header.at("units");
    for (std::size_t b = 0; b < n; ++b) {
      units.push_back(units_from_string(ju.is_array() ? ju.at(b).get<std::string>() : ju.get<std::string>()));
    }
    const auto& jr = out.header.value("roles", nlohmann::json::array());
    for (std::size_t b = 0; b < n; ++b) {
      out.roles.push_back(b < jr.size() ? std::optional<Role>(role_from_string(jr[b].get<std::string>()))
                                        : std::nullopt);
      Grid g(w, h, geo, units[b]);
      for (std::size_t i = 0; i < px; ++i) {
        const std::size_t o = (b * px + i) * 4;
        const std::uint32_t bits = static_cast<std::uint32_t>(bin[o]) | static_cast<std::uint32_t>(bin[o + 1]) << 8 |
                                   static_cast<std::uint32_t>(bin[o + 2]) << 16 |
                                   static_cast<std::uint32_t>(bin[o + 3]) << 24;
        const float v = std::bit_cast<float>(bits);
        if (std::isfinite(v)) {
          g.set(i, v);
        } else {
          g.set_nodata(i);
        }
      }
      out.grids.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, json_path.string() + ": " + e.what());
  }
  return out;
}

BandStack read_sidecar_stack(const std::filesystem::path& path) {
  SidecarRaster r = read_sidecar(path);
  std::vector<std::pair<Role, Grid>> bands;
  for (std::size_t i = 0; i < r.grids.size(); ++i) {
    if (!r.roles[i]) throw Error(ErrorCode::InvalidArgument, path.string() + ": band without a role");
    bands.emplace_back(*r.roles[i], std::move(r.grids[i]));
  }
  return align_stack(std::move(bands));
}

void write_raster(const Grid& grid, const std::filesystem::path& path, RasterFormat format) {
  std::span<const Grid> one(&grid, 1);
  if (format == RasterFormat::geotiff) {
    write_atomic(path, encode_geotiff(one));
  } else {
    write_sidecar(path, one);
  }
}

void write_raster(const BandStack& stack, const std::filesystem::path& path, RasterFormat format) {
  std::vector<Grid> grids;
  std::vector<Role> roles;
  for (const auto& [role, grid] : stack.bands()) {
    roles.push_back(role);
    grids.push_back(grid);
  }
  if (format == RasterFormat::geotiff) {
    write_atomic(path, encode_geotiff(grids, roles));
  } else {
    write_sidecar(path, grids, roles);
  }
}

}  // namespace uhi
