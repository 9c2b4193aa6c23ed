#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "uhi/catalog.hpp"
#include "uhi/indices.hpp"
#include "uhi/vit.hpp"

namespace uhi {

// Pixel rectangle: rows [row, row + height), cols [col, col + width).
struct Bbox {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  bool contains(int r, int c) const { return r >= row && r < row + height && c >= col && c < col + width; }
  // BboxOutOfBounds unless non-empty and inside a width x height grid.
  void check_within(int grid_width, int grid_height) const;
  int center_col() const { return col + width / 2; }
  bool operator==(const Bbox&) const = default;
};

nlohmann::json to_json(const Bbox& b);
Bbox bbox_from_json(const nlohmann::json& j);

using Spectrum = std::map<Role, double>;

enum class DonorKind { forest, urban, explicit_spectrum };

struct PixelSwap {
  Bbox bbox;
  DonorKind donor = DonorKind::forest;
  Spectrum spectrum;  // explicit_spectrum only
  bool operator==(const PixelSwap&) const = default;
};

struct IndexRetarget {
  Bbox bbox;
  IndexKind kind = IndexKind::NDVI;
  std::optional<double> target;  // exactly one of target / delta
  std::optional<double> delta;
  Role adjusted_band = Role::nir;
  bool allow_clamp = false;  // otherwise UnreachableTarget when a pixel clamps
  bool operator==(const IndexRetarget&) const = default;
};

struct Forcing {
  Source source = Source::cordex_rcp45;
  int horizon_year = 2050;
  std::optional<Bbox> bbox;  // profile/stats region; whole grid when absent
  bool operator==(const Forcing&) const = default;
};

using Modification = std::variant<PixelSwap, IndexRetarget, Forcing>;

struct ScenarioDef {
  std::string scenario_id;
  std::string base_sample_id;
  std::string checkpoint_id = "default";
  Modification modification;
  std::string created_at;

  // Region the modification touches (whole grid for forcing without bbox).
  Bbox region(int grid_width, int grid_height) const;
  void validate() const;
};

nlohmann::json to_json(const ScenarioDef& d);
// Throws InvalidArgument on malformed input.
ScenarioDef scenario_def_from_json(const nlohmann::json& j);

inline constexpr int kSupportedHorizons[] = {2030, 2050, 2100};
inline constexpr int kForestClass = 2;
inline constexpr int kUrbanClass = 7;

struct ForcingRecord {
  Source source = Source::cordex_rcp45;
  nlohmann::json metadata;
  std::map<int, Grid> t2m;  // horizon year -> kelvin or celsius grid
};

nlohmann::json forcing_metadata(Source s);

// Per-band lower median of the reflectance roles over pixels of `class_id`.
Spectrum derive_donor(const Sample& sample, const Grid& lulc, int class_id);

Sample pixel_swap(const Sample& sample, const Bbox& bbox, const Spectrum& donor);

struct RetargetResult {
  Sample sample;
  std::vector<std::uint8_t> clamped;  // per pixel, 1 where the band hit 0 or 1
  std::size_t clamped_count = 0;
};

RetargetResult index_retarget(const Sample& sample, const IndexRetarget& spec);
// Convenience for a fixed target.
RetargetResult index_retarget(const Sample& sample, const Bbox& bbox, IndexKind kind, double target,
                              Role adjusted_band, bool allow_clamp = false);

Sample apply_forcing(const Sample& sample, const ForcingRecord& forcing, int year);

struct ProfilePoint {
  int row = 0;
  std::optional<double> value_celsius;  // empty at nodata
  bool inside_bbox = false;
  bool operator==(const ProfilePoint&) const = default;
};

// Column through the horizontal center of the bbox (col + width / 2),
// every row top to bottom.
std::vector<ProfilePoint> vertical_profile(const Grid& grid, const Bbox& bbox);
std::string profile_csv(const std::vector<ProfilePoint>& profile);

struct ScenarioStats {
  std::optional<double> mean_delta_inside;
  std::optional<double> mean_delta_outside_ring;
  double max_abs_delta = 0.0;
};

inline constexpr int kOutsideRingWidth = 3;

struct ScenarioResult {
  std::string scenario_id;
  Grid predicted_lst;
  Grid baseline_lst;
  Grid diff;
  Bbox bbox;
  std::vector<ProfilePoint> profile;
  ScenarioStats stats;
  std::size_t clamped_pixels = 0;

  // Stats, profile and grid summary; grids themselves are exported separately.
  nlohmann::json to_json() const;
};

// diff = predicted - baseline, with both rounded to float32 first so the
// identity survives a float32 export.
Grid prediction_diff(Grid& predicted, Grid& baseline);
ScenarioStats scenario_stats(const Grid& diff, const Bbox& bbox);

Sample modify_sample(const ScenarioDef& def, const Sample& base, const ForcingRecord* forcing,
                     std::size_t* clamped = nullptr);

ScenarioResult run_scenario(const ScenarioDef& def, const Sample& base, const ModelParams& params,
                            const ForcingRecord* forcing = nullptr);

}  // namespace uhi
