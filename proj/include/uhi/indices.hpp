#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "uhi/raster.hpp"

namespace uhi {

enum class IndexKind { NDVI, NDBI, NDWI };

std::string_view to_string(IndexKind k);
IndexKind index_kind_from_string(std::string_view s);

// (a - b) / (a + b) with `a` the positive-signed role.
struct IndexBands {
  Role a;
  Role b;
};
IndexBands index_bands(IndexKind kind);

// Per-pixel normalized difference; nodata where either input is nodata or
// a + b == 0. Output units: index.
Grid compute_index(const BandStack& stack, IndexKind kind);
Grid normalized_difference(const Grid& a, const Grid& b);

struct SplitWindowCoeffs {
  std::string name;
  std::array<double, 8> b{};
  double epsilon = 1.0;
  double delta_epsilon = 0.0;
  std::optional<double> water_vapor;  // g/cm^2; informational, already folded into b

  void validate() const;
};

nlohmann::json to_json(const SplitWindowCoeffs& c);
SplitWindowCoeffs split_window_from_json(const nlohmann::json& j);

// Named coefficient set shipped as data; values follow the all-range
// column-water-vapour fit commonly used for Landsat 8 TIRS bands 10/11.
SplitWindowCoeffs default_split_window_coeffs();

// LST in kelvin for one pixel pair of brightness temperatures (kelvin).
double split_window_kelvin(double t10, double t11, const SplitWindowCoeffs& c);

// Celsius LST grid; nodata propagates from either band.
Grid split_window_lst(const Grid& tb10, const Grid& tb11, const SplitWindowCoeffs& coeffs);

// At-sensor brightness temperature (kelvin) from TIRS digital numbers via
// the radiance rescaling and inverted Planck constants.
Grid brightness_temperature(const Grid& dn, double rad_mult, double rad_add, double k1, double k2);

inline constexpr double kKelvinOffset = 273.15;

}  // namespace uhi
