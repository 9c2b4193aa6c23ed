#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace uhi {

enum class Units { reflectance, kelvin, celsius, index, class_id };

enum class Role { coastal, blue, green, red, nir, swir1, t2m, tb10, tb11, lst, lulc };

std::string_view to_string(Units u);
std::string_view to_string(Role r);
Units units_from_string(std::string_view s);
Role role_from_string(std::string_view s);

// The six reflectance roles in canonical model-input order.
inline constexpr Role kReflectanceRoles[] = {Role::coastal, Role::blue, Role::green,
                                             Role::red,     Role::nir,  Role::swir1};
// Model input channel order: six reflectance bands followed by t2m.
inline constexpr Role kInputRoles[] = {Role::coastal, Role::blue,  Role::green, Role::red,
                                       Role::nir,     Role::swir1, Role::t2m};

// Axis-aligned georeferencing. Rows increase southward, so map y of row r is
// origin_y - r * pixel_h.
struct GeoRef {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_w = 1.0;
  double pixel_h = 1.0;
  std::string crs_id;

  bool operator==(const GeoRef&) const = default;

  void validate() const;
  // Georef of a sub-window starting at (row, col).
  GeoRef shifted(int row, int col) const;
};

class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, GeoRef georef, Units units, double fill = 0.0);
  Grid(int width, int height, GeoRef georef, Units units, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  const GeoRef& georef() const { return georef_; }
  Units units() const { return units_; }
  void set_units(Units u) { units_ = u; }

  double at(int row, int col) const { return values_[index(row, col)]; }
  double operator[](std::size_t i) const { return values_[i]; }
  bool is_nodata(int row, int col) const { return mask_[index(row, col)] != 0; }
  bool is_nodata(std::size_t i) const { return mask_[i] != 0; }

  void set(int row, int col, double v);
  void set(std::size_t i, double v);
  void set_nodata(int row, int col);
  void set_nodata(std::size_t i);

  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> mask() const { return mask_; }
  std::size_t nodata_count() const;

  bool same_geometry(const Grid& other) const {
    return width_ == other.width_ && height_ == other.height_ && georef_ == other.georef_;
  }

  // Checks the structural invariants; throws InvalidArgument on violation.
  void validate() const;

  // Dimensions, georef, units, and mask equal; non-masked values bitwise equal.
  friend bool operator==(const Grid& a, const Grid& b);

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  GeoRef georef_;
  Units units_ = Units::reflectance;
  std::vector<double> values_;
  std::vector<std::uint8_t> mask_;
};

// Co-registered bands keyed by unique role, in insertion order.
class BandStack {
 public:
  BandStack() = default;

  const Grid& get(Role role) const;
  Grid& get_mut(Role role);
  const Grid* find(Role role) const;
  bool has(Role role) const { return find(role) != nullptr; }
  std::size_t size() const { return bands_.size(); }
  bool empty() const { return bands_.empty(); }
  const std::vector<std::pair<Role, Grid>>& bands() const { return bands_; }
  std::vector<Role> roles() const;

  int width() const;
  int height() const;
  const GeoRef& georef() const;

  // Adds or replaces a band; the grid must match the stack geometry.
  void put(Role role, Grid grid);

  friend bool operator==(const BandStack&, const BandStack&) = default;

 private:
  friend BandStack align_stack(std::vector<std::pair<Role, Grid>> bands);
  std::vector<std::pair<Role, Grid>> bands_;
};

struct Patch {
  BandStack stack;
  int origin_row = 0;
  int origin_col = 0;
  int patch_size = 0;
};

enum class ResampleMethod { nearest, bilinear };

Grid resample(const Grid& src, const GeoRef& target, int width, int height,
              ResampleMethod method);

std::vector<Patch> tile(const BandStack& stack, int patch_size, int stride);

// Reassembles one role from non-overlapping patches into a parent grid whose
// georef is recovered from the patch offsets. Uncovered pixels are nodata.
Grid stitch(std::span<const Patch> patches, int parent_width, int parent_height,
            std::optional<Role> role = std::nullopt);

BandStack align_stack(std::vector<std::pair<Role, Grid>> bands);

}  // namespace uhi
