#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "uhi/raster.hpp"

namespace uhi {

// Decoded contents of the first IFD of a classic (non-Big) TIFF.
struct GeoTiffImage {
  std::vector<Grid> grids;                // one per sample
  std::vector<std::optional<Role>> roles; // from our ImageDescription, if present
  bool missing_geo_tags = false;          // georef fell back to unit pixels at (0, 0)
};

// Supported: II/MM byte order, strips or tiles, chunky or planar, no
// compression or Deflate (8 / 32946), predictor 1 or 2, uint8 / uint16 /
// int16 / float32 samples, 1..8 samples per pixel. Grids are tagged with
// `default_units` unless the file carries our unit annotation.
GeoTiffImage decode_geotiff(std::span<const std::uint8_t> bytes,
                            Units default_units = Units::reflectance);
GeoTiffImage read_geotiff(const std::filesystem::path& path,
                          Units default_units = Units::reflectance);

// Reads a file into a stack. With an empty `roles`, roles come from the
// file's annotation; otherwise one role per sample, in order.
BandStack read_geotiff_stack(const std::filesystem::path& path, std::span<const Role> roles = {},
                             Units default_units = Units::reflectance);

// Uncompressed, striped, chunky float32; nodata written as NaN and announced
// through GDAL_NODATA.
std::vector<std::uint8_t> encode_geotiff(std::span<const Grid> grids,
                                         std::span<const Role> roles = {});

}  // namespace uhi
