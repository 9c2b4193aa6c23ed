#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "uhi/raster.hpp"

namespace uhi {

enum class RasterFormat { geotiff, sidecar };

// Sidecar layout: <base>.bin holds band-sequential, row-major, little-endian
// float32 values (nodata as NaN); <base>.json holds
// {width, height, bands, georef, units, nodata, roles, dtype, byte_order}
// plus any caller metadata under "meta".
struct SidecarRaster {
  std::vector<Grid> grids;
  std::vector<std::optional<Role>> roles;
  nlohmann::json header;
};

std::filesystem::path sidecar_base(const std::filesystem::path& path);

void write_sidecar(const std::filesystem::path& path, std::span<const Grid> grids,
                   std::span<const Role> roles = {}, const nlohmann::json& meta = nullptr);
SidecarRaster read_sidecar(const std::filesystem::path& path);
BandStack read_sidecar_stack(const std::filesystem::path& path);

nlohmann::json georef_to_json(const GeoRef& g);
GeoRef georef_from_json(const nlohmann::json& j);

void write_raster(const Grid& grid, const std::filesystem::path& path, RasterFormat format);
void write_raster(const BandStack& stack, const std::filesystem::path& path, RasterFormat format);

}  // namespace uhi
