#include "uhi/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "uhi/error.hpp"

namespace uhi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyOverlap: return "EmptyOverlap";
    case ErrorCode::PatchTooLarge: return "PatchTooLarge";
    case ErrorCode::OverlapConflict: return "OverlapConflict";
    case ErrorCode::GeoMismatch: return "GeoMismatch";
    case ErrorCode::DuplicateRole: return "DuplicateRole";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DateMismatch: return "DateMismatch";
    case ErrorCode::MissingBand: return "MissingBand";
    case ErrorCode::DuplicateScene: return "DuplicateScene";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptyCatalog: return "EmptyCatalog";
    case ErrorCode::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorCode::NoValidPixels: return "NoValidPixels";
    case ErrorCode::BboxOutOfBounds: return "BboxOutOfBounds";
    case ErrorCode::ClassAbsent: return "ClassAbsent";
    case ErrorCode::UnreachableTarget: return "UnreachableTarget";
    case ErrorCode::MissingHorizon: return "MissingHorizon";
    case ErrorCode::UnknownSample: return "UnknownSample";
    case ErrorCode::UnknownCheckpoint: return "UnknownCheckpoint";
  }
  return "Unknown";
}

namespace {

constexpr std::string_view kUnitNames[] = {"reflectance", "kelvin", "celsius", "index",
                                           "class_id"};
constexpr std::string_view kRoleNames[] = {"coastal", "blue", "green", "red",
                                           "nir",     "swir1", "t2m", "tb10",
                                           "tb11",    "lst",  "lulc"};

const double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string_view to_string(Units u) { return kUnitNames[static_cast<int>(u)]; }
std::string_view to_string(Role r) { return kRoleNames[static_cast<int>(r)]; }

Units units_from_string(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kUnitNames); ++i) {
    if (kUnitNames[i] == s) return static_cast<Units>(i);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown units '" + std::string(s) + "'");
}

Role role_from_string(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kRoleNames); ++i) {
    if (kRoleNames[i] == s) return static_cast<Role>(i);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown band role '" + std::string(s) + "'");
}

void GeoRef::validate() const {
  if (!(pixel_w > 0.0) || !(pixel_h > 0.0) || !std::isfinite(pixel_w) ||
      !std::isfinite(pixel_h) || !std::isfinite(origin_x) || !std::isfinite(origin_y)) {
    throw Error(ErrorCode::InvalidArgument, "georef requires finite origin and positive pixel size");
  }
}

GeoRef GeoRef::shifted(int row, int col) const {
  GeoRef g = *this;
  g.origin_x = origin_x + col * pixel_w;
  g.origin_y = origin_y - row * pixel_h;
  return g;
}

Grid::Grid(int width, int height, GeoRef georef, Units units, double fill)
    : width_(width), height_(height), georef_(std::move(georef)), units_(units) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative grid dims");
  values_.assign(static_cast<std::size_t>(width) * height, fill);
  mask_.assign(values_.size(), 0);
}

Grid::Grid(int width, int height, GeoRef georef, Units units, std::vector<double> values)
    : width_(width), height_(height), georef_(std::move(georef)), units_(units),
      values_(std::move(values)) {
  if (width < 0 || height < 0 ||
      values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw Error(ErrorCode::ShapeMismatch, "value count does not match grid dims");
  }
  mask_.assign(values_.size(), 0);
}

void Grid::set(int row, int col, double v) { set(index(row, col), v); }

void Grid::set(std::size_t i, double v) {
  values_[i] = v;
  mask_[i] = 0;
}

void Grid::set_nodata(int row, int col) { set_nodata(index(row, col)); }

void Grid::set_nodata(std::size_t i) {
  values_[i] = kNaN;
  mask_[i] = 1;
}

std::size_t Grid::nodata_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

void Grid::validate() const {
  georef_.validate();
  if (values_.size() != static_cast<std::size_t>(width_) * height_ || mask_.size() != values_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "grid buffers inconsistent with dims");
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (mask_[i]) continue;
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorCode::InvalidArgument, "non-finite value at unmasked pixel " + std::to_string(i));
    }
    if (units_ == Units::index && (values_[i] < -1.0 || values_[i] > 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "index value outside [-1, 1]");
    }
  }
}

bool operator==(const Grid& a, const Grid& b) {
  if (a.width_ != b.width_ || a.height_ != b.height_ || !(a.georef_ == b.georef_) ||
      a.units_ != b.units_ || a.mask_ != b.mask_) {
    return false;
  }
  for (std::size_t i = 0; i < a.values_.size(); ++i) {
    if (a.mask_[i]) continue;
    if (std::memcmp(&a.values_[i], &b.values_[i], sizeof(double)) != 0) return false;
  }
  return true;
}

const Grid* BandStack::find(Role role) const {
  for (const auto& [r, g] : bands_) {
    if (r == role) return &g;
  }
  return nullptr;
}

const Grid& BandStack::get(Role role) const {
  if (const Grid* g = find(role)) return *g;
  throw Error(ErrorCode::MissingBand, "band '" + std::string(to_string(role)) + "' not in stack");
}

Grid& BandStack::get_mut(Role role) {
  for (auto& [r, g] : bands_) {
    if (r == role) return g;
  }
  throw Error(ErrorCode::MissingBand, "band '" + std::string(to_string(role)) + "' not in stack");
}

std::vector<Role> BandStack::roles() const {
  std::vector<Role> out;
  out.reserve(bands_.size());
  for (const auto& b : bands_) out.push_back(b.first);
  return out;
}

int BandStack::width() const { return bands_.empty() ? 0 : bands_.front().second.width(); }
int BandStack::height() const { return bands_.empty() ? 0 : bands_.front().second.height(); }

const GeoRef& BandStack::georef() const {
  static const GeoRef kEmpty;
  return bands_.empty() ? kEmpty : bands_.front().second.georef();
}

void BandStack::put(Role role, Grid grid) {
  if (!bands_.empty() && !grid.same_geometry(bands_.front().second)) {
    throw Error(ErrorCode::GeoMismatch, "band '" + std::string(to_string(role)) +
                                            "' does not match stack geometry");
  }
  for (auto& [r, g] : bands_) {
    if (r == role) {
      g = std::move(grid);
      return;
    }
  }
  bands_.emplace_back(role, std::move(grid));
}

BandStack align_stack(std::vector<std::pair<Role, Grid>> bands) {
  std::set<Role> seen;
  for (const auto& [role, grid] : bands) {
    if (!seen.insert(role).second) {
      throw Error(ErrorCode::DuplicateRole, "role '" + std::string(to_string(role)) + "' repeated");
    }
    if (!grid.same_geometry(bands.front().second)) {
      throw Error(ErrorCode::GeoMismatch, "band '" + std::string(to_string(role)) +
                                              "' differs in dims or georef from '" +
                                              std::string(to_string(bands.front().first)) + "'");
    }
  }
  BandStack stack;
  stack.bands_ = std::move(bands);
  return stack;
}

namespace {

// Continuous source pixel-center coordinate; integers fall on pixel centers.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Grid resample(const Grid& src, const GeoRef& target, int width, int height,
              ResampleMethod method) {
  src.georef().validate();
  target.validate();
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "target dims must be positive");
  if (src.georef() == target && src.width() == width && src.height() == height) return src;

  const GeoRef& s = src.georef();
  const double src_x0 = s.origin_x, src_x1 = s.origin_x + src.width() * s.pixel_w;
  const double src_y0 = s.origin_y - src.height() * s.pixel_h, src_y1 = s.origin_y;
  const double dst_x0 = target.origin_x, dst_x1 = target.origin_x + width * target.pixel_w;
  const double dst_y0 = target.origin_y - height * target.pixel_h, dst_y1 = target.origin_y;
  if (dst_x1 <= src_x0 || dst_x0 >= src_x1 || dst_y1 <= src_y0 || dst_y0 >= src_y1) {
    throw Error(ErrorCode::EmptyOverlap, "source and target extents are disjoint");
  }

  Grid out(width, height, target, src.units());
  const int sw = src.width(), sh = src.height();
  for (int r = 0; r < height; ++r) {
    const double y = target.origin_y - (r + 0.5) * target.pixel_h;
    const double sr = snap((s.origin_y - y) / s.pixel_h - 0.5);
    for (int c = 0; c < width; ++c) {
      const double x = target.origin_x + (c + 0.5) * target.pixel_w;
      const double sc = snap((x - s.origin_x) / s.pixel_w - 0.5);
      if (sr < -0.5 || sr > sh - 0.5 || sc < -0.5 || sc > sw - 0.5) {
        out.set_nodata(r, c);
        continue;
      }
      if (method == ResampleMethod::nearest) {
        const int ir = std::clamp(static_cast<int>(std::floor(sr + 0.5)), 0, sh - 1);
        const int ic = std::clamp(static_cast<int>(std::floor(sc + 0.5)), 0, sw - 1);
        if (src.is_nodata(ir, ic)) {
          out.set_nodata(r, c);
        } else {
          out.set(r, c, src.at(ir, ic));
        }
        continue;
      }
      // Bilinear over the enclosing pixel centers, edge-replicated. Only
      // neighbours with non-zero weight contribute (and can poison with nodata).
      const double fr0 = std::floor(sr), fc0 = std::floor(sc);
      const double wr = sr - fr0, wc = sc - fc0;
      const int r0 = static_cast<int>(fr0), c0 = static_cast<int>(fc0);
      const int rows[2] = {std::clamp(r0, 0, sh - 1), std::clamp(r0 + 1, 0, sh - 1)};
      const int cols[2] = {std::clamp(c0, 0, sw - 1), std::clamp(c0 + 1, 0, sw - 1)};
      const double row_w[2] = {1.0 - wr, wr};
      const double col_w[2] = {1.0 - wc, wc};
      double acc = 0.0;
      bool nodata = false;
      for (int i = 0; i < 2 && !nodata; ++i) {
        for (int j = 0; j < 2; ++j) {
          const double w = row_w[i] * col_w[j];
          if (w == 0.0) continue;
          if (src.is_nodata(rows[i], cols[j])) {
            nodata = true;
            break;
          }
          acc += w * src.at(rows[i], cols[j]);
        }
      }
      if (nodata) {
        out.set_nodata(r, c);
      } else {
        out.set(r, c, acc);
      }
    }
  }
  return out;
}

std::vector<Patch> tile(const BandStack& stack, int patch_size, int stride) {
  if (patch_size < 1 || stride < 1) {
    throw Error(ErrorCode::InvalidArgument, "patch_size and stride must be positive");
  }
  const int w = stack.width(), h = stack.height();
  if (patch_size > w || patch_size > h) {
    throw Error(ErrorCode::PatchTooLarge, "patch " + std::to_string(patch_size) +
                                              " exceeds stack " + std::to_string(w) + "x" +
                                              std::to_string(h));
  }
  std::vector<Patch> patches;
  const int nr = (h - patch_size) / stride + 1;
  const int nc = (w - patch_size) / stride + 1;
  patches.reserve(static_cast<std::size_t>(nr) * nc);
  for (int pr = 0; pr < nr; ++pr) {
    for (int pc = 0; pc < nc; ++pc) {
      const int r0 = pr * stride, c0 = pc * stride;
      std::vector<std::pair<Role, Grid>> bands;
      for (const auto& [role, grid] : stack.bands()) {
        Grid sub(patch_size, patch_size, grid.georef().shifted(r0, c0), grid.units());
        for (int r = 0; r < patch_size; ++r) {
          for (int c = 0; c < patch_size; ++c) {
            if (grid.is_nodata(r0 + r, c0 + c)) {
              sub.set_nodata(r, c);
            } else {
              sub.set(r, c, grid.at(r0 + r, c0 + c));
            }
          }
        }
        bands.emplace_back(role, std::move(sub));
      }
      patches.push_back(Patch{align_stack(std::move(bands)), r0, c0, patch_size});
    }
  }
  return patches;
}

Grid stitch(std::span<const Patch> patches, int parent_width, int parent_height,
            std::optional<Role> role) {
  if (patches.empty()) throw Error(ErrorCode::InvalidArgument, "no patches to stitch");
  auto pick = [&](const Patch& p) -> const Grid& {
    return role ? p.stack.get(*role) : p.stack.bands().front().second;
  };
  const Patch& first = patches.front();
  const Grid& g0 = pick(first);
  GeoRef parent = g0.georef().shifted(-first.origin_row, -first.origin_col);
  Grid out(parent_width, parent_height, parent, g0.units());
  std::vector<std::uint8_t> written(out.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.set_nodata(i);

  for (const Patch& p : patches) {
    const Grid& g = pick(p);
    for (int r = 0; r < g.height(); ++r) {
      const int pr = p.origin_row + r;
      if (pr < 0 || pr >= parent_height) continue;
      for (int c = 0; c < g.width(); ++c) {
        const int pc = p.origin_col + c;
        if (pc < 0 || pc >= parent_width) continue;
        const std::size_t idx = static_cast<std::size_t>(pr) * parent_width + pc;
        const bool nd = g.is_nodata(r, c);
        if (written[idx]) {
          const bool prev_nd = out.is_nodata(idx);
          if (prev_nd != nd || (!nd && out[idx] != g.at(r, c))) {
            throw Error(ErrorCode::OverlapConflict,
                        "pixel (" + std::to_string(pr) + "," + std::to_string(pc) +
                            ") written with differing values");
          }
          continue;
        }
        written[idx] = 1;
        if (nd) {
          out.set_nodata(idx);
        } else {
          out.set(idx, g.at(r, c));
        }
      }
    }
  }
  return out;
}

}  // namespace uhi
