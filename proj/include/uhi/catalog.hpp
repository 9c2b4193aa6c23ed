#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "uhi/indices.hpp"
#include "uhi/raster.hpp"

namespace uhi {

enum class Source { landsat8, era5, cordex_rcp26, cordex_rcp45, cordex_rcp85, lulc, lst_label };

std::string_view to_string(Source s);
Source source_from_string(std::string_view s);

struct SceneRecord {
  std::string scene_id;
  std::string acquisition_date;  // YYYY-MM-DD, or YYYY for annual products
  std::optional<int> hour;       // UTC hour for hourly reanalysis files
  std::map<Role, std::filesystem::path> band_paths;
  Source source = Source::landsat8;

  int year() const;
};

nlohmann::json to_json(const SceneRecord& r);

// Maps a filename onto (source, scene, date, role). Capture groups are
// 1-based; a scene_group of 0 means "use the file stem".
struct NamingPattern {
  Source source = Source::landsat8;
  std::string regex;
  int scene_group = 0;
  int date_group = 0;
  int hour_group = 0;
  int band_group = 0;                      // band token looked up in `bands`
  std::map<std::string, Role> bands;
  std::optional<Role> role;                // fixed role when band_group == 0
};

struct BandScale {
  double scale = 1.0;
  double offset = 0.0;
};

struct ThermalConstants {
  double rad_mult = 0.0;
  double rad_add = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
};

struct CatalogConfig {
  std::vector<NamingPattern> patterns;
  std::map<Role, BandScale> reflectance;       // applied to raw reflectance DNs
  std::map<Role, ThermalConstants> thermal;    // absent: thermal files already in kelvin
  std::map<Source, double> nodata;             // raw fill value per source
  SplitWindowCoeffs split_window = default_split_window_coeffs();

  static CatalogConfig defaults();
  static CatalogConfig from_json(const nlohmann::json& j);
};

struct Catalog {
  std::filesystem::path root;
  CatalogConfig config;
  std::vector<SceneRecord> records;  // sorted by (source, date, scene_id)
  std::vector<std::string> ignored;  // relative paths that matched no pattern

  const SceneRecord* find(std::string_view scene_id) const;
  std::vector<const SceneRecord*> by_source(Source s) const;
  nlohmann::json to_json() const;
};

Catalog catalog_scan(const std::filesystem::path& directory, const CatalogConfig& config);

struct Sample {
  std::string id;
  std::string scene_id;
  std::string date;
  BandStack inputs;  // coastal, blue, green, red, nir, swir1 (reflectance), t2m (celsius)
  Grid label;        // lst, celsius
  Grid lulc;         // class_id

  int width() const { return inputs.width(); }
  int height() const { return inputs.height(); }
  void validate() const;
};

// Reads a single-band raster (GeoTIFF or sidecar) as a grid with `units`.
Grid read_band(const std::filesystem::path& path, Units units);

// ERA5 record on the Landsat acquisition day, nearest in hour when hourly
// records exist (ties to the earlier hour), otherwise the daily record.
const SceneRecord* match_era5(const Catalog& catalog, const SceneRecord& landsat);
const SceneRecord* match_lulc(const Catalog& catalog, const SceneRecord& landsat);

Sample build_sample(const SceneRecord& landsat, const SceneRecord& era5, const SceneRecord& lulc,
                    const Catalog& catalog);

// Splits a sample into non-overlapping size x size sub-samples; ids carry
// the "_r<row>c<col>" suffix.
std::vector<Sample> tile_sample(const Sample& sample, int size);

}  // namespace uhi
