#include "uhi/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "uhi/error.hpp"
#include "uhi/eval.hpp"

namespace uhi {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

int get_int(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer()) bad(std::string("'") + key + "' must be an integer");
  return j[key].get<int>();
}

double get_number(const nlohmann::json& j, const char* key) {
  if (!j[key].is_number()) bad(std::string("'") + key + "' must be a number");
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) bad(std::string("'") + key + "' must be finite");
  return v;
}

std::string get_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) bad(std::string("'") + key + "' must be a string");
  return j[key].get<std::string>();
}

template <typename F>
auto parse_enum(F&& f, const std::string& v, const char* what) {
  try {
    return f(v);
  } catch (const Error&) {
    bad(std::string("unknown ") + what + " '" + v + "'");
  }
}

std::string_view donor_name(DonorKind d) {
  switch (d) {
    case DonorKind::forest: return "forest";
    case DonorKind::urban: return "urban";
    case DonorKind::explicit_spectrum: return "explicit";
  }
  return "?";
}

bool is_reflectance_role(Role r) {
  return std::find(std::begin(kReflectanceRoles), std::end(kReflectanceRoles), r) != std::end(kReflectanceRoles);
}

}  // namespace

void Bbox::check_within(int grid_width, int grid_height) const {
  if (height < 1 || width < 1 || row < 0 || col < 0 || row + height > grid_height || col + width > grid_width) {
    throw Error(ErrorCode::BboxOutOfBounds, "bbox rows " + std::to_string(row) + "+" + std::to_string(height) +
                                                ", cols " + std::to_string(col) + "+" + std::to_string(width) +
                                                " outside " + std::to_string(grid_width) + "x" +
                                                std::to_string(grid_height) + " grid");
  }
}

nlohmann::json to_json(const Bbox& b) {
  return {{"row", b.row}, {"col", b.col}, {"height", b.height}, {"width", b.width}};
}

Bbox bbox_from_json(const nlohmann::json& j) {
  if (!j.is_object()) bad("bbox must be an object");
  Bbox b{get_int(j, "row"), get_int(j, "col"), get_int(j, "height"), get_int(j, "width")};
  if (b.row < 0 || b.col < 0 || b.height < 1 || b.width < 1) bad("bbox needs row, col >= 0 and height, width >= 1");
  return b;
}

Bbox ScenarioDef::region(int grid_width, int grid_height) const {
  return std::visit(
      [&](const auto& m) -> Bbox {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Forcing>) {
          return m.bbox ? *m.bbox : Bbox{0, 0, grid_height, grid_width};
        } else {
          return m.bbox;
        }
      },
      modification);
}

void ScenarioDef::validate() const {
  if (base_sample_id.empty()) bad("base_sample_id is required");
  if (const auto* swap = std::get_if<PixelSwap>(&modification)) {
    if (swap->donor == DonorKind::explicit_spectrum) {
      for (Role r : kReflectanceRoles) {
        const auto it = swap->spectrum.find(r);
        if (it == swap->spectrum.end()) bad("explicit spectrum lacks band '" + std::string(to_string(r)) + "'");
        if (!std::isfinite(it->second) || it->second < 0.0 || it->second > 1.0) {
          bad("explicit spectrum values must lie in [0, 1]");
        }
      }
      for (const auto& [r, v] : swap->spectrum) {
        if (!is_reflectance_role(r)) bad("spectrum band '" + std::string(to_string(r)) + "' is not a reflectance band");
      }
    }
  } else if (const auto* rt = std::get_if<IndexRetarget>(&modification)) {
    if (rt->target.has_value() == rt->delta.has_value()) bad("index_retarget needs exactly one of target_value / delta");
    if (rt->target && !(*rt->target > -1.0 && *rt->target < 1.0)) bad("target must lie in (-1, 1)");
    if (rt->delta && !(std::abs(*rt->delta) < 2.0)) bad("delta must lie in (-2, 2)");
    const IndexBands ib = index_bands(rt->kind);
    if (rt->adjusted_band != ib.a && rt->adjusted_band != ib.b) {
      bad("adjusted_band must be one of the bands of " + std::string(to_string(rt->kind)));
    }
  } else {
    const auto& f = std::get<Forcing>(modification);
    if (f.source != Source::cordex_rcp26 && f.source != Source::cordex_rcp45 && f.source != Source::cordex_rcp85) {
      bad("forcing source must be cordex_rcp26, cordex_rcp45 or cordex_rcp85");
    }
    if (std::find(std::begin(kSupportedHorizons), std::end(kSupportedHorizons), f.horizon_year) ==
        std::end(kSupportedHorizons)) {
      bad("horizon_year must be 2030, 2050 or 2100");
    }
  }
}

nlohmann::json to_json(const ScenarioDef& d) {
  nlohmann::json m;
  if (const auto* swap = std::get_if<PixelSwap>(&d.modification)) {
    m = {{"type", "pixel_swap"}, {"bbox", to_json(swap->bbox)}, {"donor", donor_name(swap->donor)}};
    if (swap->donor == DonorKind::explicit_spectrum) {
      nlohmann::json s = nlohmann::json::object();
      for (const auto& [r, v] : swap->spectrum) s[std::string(to_string(r))] = v;
      m["spectrum"] = s;
    }
  } else if (const auto* rt = std::get_if<IndexRetarget>(&d.modification)) {
    m = {{"type", "index_retarget"},
         {"bbox", to_json(rt->bbox)},
         {"kind", to_string(rt->kind)},
         {"adjusted_band", to_string(rt->adjusted_band)},
         {"allow_clamp", rt->allow_clamp}};
    if (rt->target) m["target_value"] = *rt->target;
    if (rt->delta) m["delta"] = *rt->delta;
  } else {
    const auto& f = std::get<Forcing>(d.modification);
    m = {{"type", "forcing"}, {"source", to_string(f.source)}, {"horizon_year", f.horizon_year}};
    if (f.bbox) m["bbox"] = to_json(*f.bbox);
  }
  return {{"scenario_id", d.scenario_id},   {"base_sample_id", d.base_sample_id},
          {"checkpoint_id", d.checkpoint_id}, {"modification", m},
          {"created_at", d.created_at}};
}

ScenarioDef scenario_def_from_json(const nlohmann::json& j) {
  if (!j.is_object()) bad("scenario definition must be a JSON object");
  ScenarioDef d;
  if (j.contains("scenario_id")) d.scenario_id = get_string(j, "scenario_id");
  d.base_sample_id = get_string(j, "base_sample_id");
  if (j.contains("checkpoint_id")) d.checkpoint_id = get_string(j, "checkpoint_id");
  if (j.contains("created_at")) d.created_at = get_string(j, "created_at");
  if (!j.contains("modification") || !j["modification"].is_object()) bad("'modification' must be an object");
  const auto& m = j["modification"];
  const std::string type = get_string(m, "type");
  if (type == "pixel_swap") {
    PixelSwap s;
    s.bbox = bbox_from_json(m.value("bbox", nlohmann::json()));
    const std::string donor = get_string(m, "donor");
    if (donor == "forest") {
      s.donor = DonorKind::forest;
    } else if (donor == "urban") {
      s.donor = DonorKind::urban;
    } else if (donor == "explicit") {
      s.donor = DonorKind::explicit_spectrum;
      if (!m.contains("spectrum") || !m["spectrum"].is_object()) bad("explicit donor needs a 'spectrum' object");
      for (const auto& [k, v] : m["spectrum"].items()) {
        const Role r = parse_enum([](const std::string& x) { return role_from_string(x); }, k, "band");
        if (!v.is_number()) bad("spectrum values must be numbers");
        s.spectrum[r] = v.get<double>();
      }
    } else {
      bad("donor must be forest, urban or explicit");
    }
    d.modification = s;
  } else if (type == "index_retarget") {
    IndexRetarget r;
    r.bbox = bbox_from_json(m.value("bbox", nlohmann::json()));
    r.kind = parse_enum([](const std::string& x) { return index_kind_from_string(x); }, get_string(m, "kind"), "index");
    r.adjusted_band =
        parse_enum([](const std::string& x) { return role_from_string(x); }, get_string(m, "adjusted_band"), "band");
    if (m.contains("target_value") && !m["target_value"].is_null()) r.target = get_number(m, "target_value");
    if (m.contains("delta") && !m["delta"].is_null()) r.delta = get_number(m, "delta");
    if (m.contains("allow_clamp")) {
      if (!m["allow_clamp"].is_boolean()) bad("'allow_clamp' must be a boolean");
      r.allow_clamp = m["allow_clamp"].get<bool>();
    }
    d.modification = r;
  } else if (type == "forcing") {
    Forcing f;
    f.source = parse_enum([](const std::string& x) { return source_from_string(x); }, get_string(m, "source"), "source");
    f.horizon_year = get_int(m, "horizon_year");
    if (m.contains("bbox") && !m["bbox"].is_null()) f.bbox = bbox_from_json(m["bbox"]);
    d.modification = f;
  } else {
    bad("modification type must be pixel_swap, index_retarget or forcing");
  }
  d.validate();
  return d;
}

nlohmann::json forcing_metadata(Source s) {
  switch (s) {
    case Source::cordex_rcp26:
      return {{"scenario", "rcp26"}, {"pathway", "peak-and-decline"}, {"warming", "below 2 C"}};
    case Source::cordex_rcp45:
      return {{"scenario", "rcp45"}, {"pathway", "stabilization"}, {"co2_ppm_2100", 650}};
    case Source::cordex_rcp85:
      return {{"scenario", "rcp85"}, {"pathway", "high emissions"}, {"co2_ppm_2100", 1370}};
    default:
      throw Error(ErrorCode::InvalidArgument, "not a forcing source: " + std::string(to_string(s)));
  }
}

Spectrum derive_donor(const Sample& sample, const Grid& lulc, int class_id) {
  if (!lulc.same_geometry(sample.inputs.get(kReflectanceRoles[0]))) {
    throw Error(ErrorCode::GeoMismatch, "LULC grid not co-registered with the sample");
  }
  Spectrum out;
  for (Role r : kReflectanceRoles) {
    const Grid& g = sample.inputs.get(r);
    std::vector<double> v;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!lulc.is_nodata(i) && std::lround(lulc[i]) == class_id && !g.is_nodata(i)) v.push_back(g[i]);
    }
    if (v.empty()) {
      throw Error(ErrorCode::ClassAbsent, "class " + std::to_string(class_id) + " (" + lulc_class_name(class_id) +
                                              ") absent from sample '" + sample.id + "'");
    }
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    out[r] = v[k];
  }
  return out;
}

Sample pixel_swap(const Sample& sample, const Bbox& bbox, const Spectrum& donor) {
  bbox.check_within(sample.width(), sample.height());
  for (Role r : kReflectanceRoles) {
    if (!donor.count(r)) throw Error(ErrorCode::MissingBand, "donor lacks band '" + std::string(to_string(r)) + "'");
  }
  Sample out = sample;
  for (Role r : kReflectanceRoles) {
    Grid& g = out.inputs.get_mut(r);
    const double v = donor.at(r);
    for (int row = bbox.row; row < bbox.row + bbox.height; ++row) {
      for (int col = bbox.col; col < bbox.col + bbox.width; ++col) g.set(row, col, v);
    }
  }
  return out;
}

RetargetResult index_retarget(const Sample& sample, const IndexRetarget& spec) {
  spec.bbox.check_within(sample.width(), sample.height());
  if (spec.target.has_value() == spec.delta.has_value()) {
    throw Error(ErrorCode::InvalidArgument, "index_retarget needs exactly one of target_value / delta");
  }
  const IndexBands ib = index_bands(spec.kind);
  const bool adjust_a = spec.adjusted_band == ib.a;
  if (!adjust_a && spec.adjusted_band != ib.b) {
    throw Error(ErrorCode::InvalidArgument, "adjusted band is not part of " + std::string(to_string(spec.kind)));
  }
  const Role fixed = adjust_a ? ib.b : ib.a;
  RetargetResult res{sample, std::vector<std::uint8_t>(static_cast<std::size_t>(sample.width()) * sample.height(), 0), 0};
  const Grid& a = sample.inputs.get(ib.a);
  const Grid& b = sample.inputs.get(ib.b);
  const Grid& other = sample.inputs.get(fixed);
  Grid& adj = res.sample.inputs.get_mut(spec.adjusted_band);
  for (int row = spec.bbox.row; row < spec.bbox.row + spec.bbox.height; ++row) {
    for (int col = spec.bbox.col; col < spec.bbox.col + spec.bbox.width; ++col) {
      if (other.is_nodata(row, col)) continue;
      double t;
      if (spec.target) {
        t = *spec.target;
      } else {
        if (a.is_nodata(row, col) || b.is_nodata(row, col)) continue;
        const double sum = a.at(row, col) + b.at(row, col);
        if (sum == 0.0) continue;
        t = (a.at(row, col) - b.at(row, col)) / sum + *spec.delta;
      }
      if (!(t > -1.0 && t < 1.0)) {
        throw Error(ErrorCode::UnreachableTarget, "index target " + std::to_string(t) + " outside (-1, 1) at row " +
                                                      std::to_string(row) + ", col " + std::to_string(col));
      }
      const double o = other.at(row, col);
      if (!(o > 0.0)) {
        throw Error(ErrorCode::UnreachableTarget, "fixed band '" + std::string(to_string(fixed)) +
                                                      "' is not positive at row " + std::to_string(row) + ", col " +
                                                      std::to_string(col));
      }
      double v = adjust_a ? o * (1.0 + t) / (1.0 - t) : o * (1.0 - t) / (1.0 + t);
      if (v < 0.0 || v > 1.0) {
        if (!spec.allow_clamp) {
          throw Error(ErrorCode::UnreachableTarget,
                      "required " + std::string(to_string(spec.adjusted_band)) + " = " + std::to_string(v) +
                          " outside [0, 1] at row " + std::to_string(row) + ", col " + std::to_string(col));
        }
        v = std::clamp(v, 0.0, 1.0);
        res.clamped[static_cast<std::size_t>(row) * sample.width() + col] = 1;
        ++res.clamped_count;
      }
      adj.set(row, col, v);
    }
  }
  return res;
}

RetargetResult index_retarget(const Sample& sample, const Bbox& bbox, IndexKind kind, double target,
                              Role adjusted_band, bool allow_clamp) {
  IndexRetarget spec;
  spec.bbox = bbox;
  spec.kind = kind;
  spec.target = target;
  spec.adjusted_band = adjusted_band;
  spec.allow_clamp = allow_clamp;
  return index_retarget(sample, spec);
}

Sample apply_forcing(const Sample& sample, const ForcingRecord& forcing, int year) {
  const auto it = forcing.t2m.find(year);
  if (it == forcing.t2m.end()) {
    throw Error(ErrorCode::MissingHorizon, std::string(to_string(forcing.source)) + " has no grid for " +
                                               std::to_string(year));
  }
  const Grid& src = it->second;
  if (src.units() != Units::kelvin && src.units() != Units::celsius) {
    throw Error(ErrorCode::InvalidArgument, "forcing grid must be in kelvin or celsius");
  }
  Grid t2m = resample(src, sample.inputs.georef(), sample.width(), sample.height(), ResampleMethod::bilinear);
  if (src.units() == Units::kelvin) {
    for (std::size_t i = 0; i < t2m.size(); ++i) {
      if (!t2m.is_nodata(i)) t2m.set(i, t2m[i] - kKelvinOffset);
    }
  }
  t2m.set_units(Units::celsius);
  Sample out = sample;
  out.inputs.put(Role::t2m, std::move(t2m));
  return out;
}

std::vector<ProfilePoint> vertical_profile(const Grid& grid, const Bbox& bbox) {
  bbox.check_within(grid.width(), grid.height());
  const int col = bbox.center_col();
  std::vector<ProfilePoint> out;
  out.reserve(grid.height());
  for (int r = 0; r < grid.height(); ++r) {
    ProfilePoint p;
    p.row = r;
    if (!grid.is_nodata(r, col)) p.value_celsius = grid.at(r, col);
    p.inside_bbox = r >= bbox.row && r < bbox.row + bbox.height;
    out.push_back(p);
  }
  return out;
}

std::string profile_csv(const std::vector<ProfilePoint>& profile) {
  std::string out = "row,value_celsius,inside_bbox\n";
  char buf[96];
  for (const auto& p : profile) {
    if (p.value_celsius) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%s\n", p.row, *p.value_celsius, p.inside_bbox ? "true" : "false");
    } else {
      std::snprintf(buf, sizeof buf, "%d,,%s\n", p.row, p.inside_bbox ? "true" : "false");
    }
    out += buf;
  }
  return out;
}

Grid prediction_diff(Grid& predicted, Grid& baseline) {
  if (!predicted.same_geometry(baseline)) throw Error(ErrorCode::GeoMismatch, "prediction grids differ in geometry");
  Grid diff(predicted.width(), predicted.height(), predicted.georef(), Units::celsius);
  for (std::size_t i = 0; i < diff.size(); ++i) {
    if (predicted.is_nodata(i) || baseline.is_nodata(i)) {
      diff.set_nodata(i);
      continue;
    }
    const double p = static_cast<float>(predicted[i]);
    const double b = static_cast<float>(baseline[i]);
    predicted.set(i, p);
    baseline.set(i, b);
    diff.set(i, p - b);
  }
  return diff;
}

ScenarioStats scenario_stats(const Grid& diff, const Bbox& bbox) {
  bbox.check_within(diff.width(), diff.height());
  ScenarioStats s;
  double in_sum = 0.0, ring_sum = 0.0;
  std::size_t in_n = 0, ring_n = 0;
  const int k = kOutsideRingWidth;
  for (int r = 0; r < diff.height(); ++r) {
    for (int c = 0; c < diff.width(); ++c) {
      if (diff.is_nodata(r, c)) continue;
      const double d = diff.at(r, c);
      s.max_abs_delta = std::max(s.max_abs_delta, std::abs(d));
      if (bbox.contains(r, c)) {
        in_sum += d;
        ++in_n;
      } else if (r >= bbox.row - k && r < bbox.row + bbox.height + k && c >= bbox.col - k &&
                 c < bbox.col + bbox.width + k) {
        ring_sum += d;
        ++ring_n;
      }
    }
  }
  if (in_n) s.mean_delta_inside = in_sum / static_cast<double>(in_n);
  if (ring_n) s.mean_delta_outside_ring = ring_sum / static_cast<double>(ring_n);
  return s;
}

Sample modify_sample(const ScenarioDef& def, const Sample& base, const ForcingRecord* forcing, std::size_t* clamped) {
  if (clamped) *clamped = 0;
  if (const auto* swap = std::get_if<PixelSwap>(&def.modification)) {
    swap->bbox.check_within(base.width(), base.height());
    Spectrum donor = swap->spectrum;
    if (swap->donor == DonorKind::forest) donor = derive_donor(base, base.lulc, kForestClass);
    if (swap->donor == DonorKind::urban) donor = derive_donor(base, base.lulc, kUrbanClass);
    return pixel_swap(base, swap->bbox, donor);
  }
  if (const auto* rt = std::get_if<IndexRetarget>(&def.modification)) {
    RetargetResult r = index_retarget(base, *rt);
    if (clamped) *clamped = r.clamped_count;
    return std::move(r.sample);
  }
  const auto& f = std::get<Forcing>(def.modification);
  if (f.bbox) f.bbox->check_within(base.width(), base.height());
  if (!forcing || forcing->source != f.source) {
    throw Error(ErrorCode::MissingHorizon, "no forcing record for " + std::string(to_string(f.source)));
  }
  return apply_forcing(base, *forcing, f.horizon_year);
}

ScenarioResult run_scenario(const ScenarioDef& def, const Sample& base, const ModelParams& params,
                            const ForcingRecord* forcing) {
  def.validate();
  ScenarioResult res;
  res.scenario_id = def.scenario_id;
  const Sample modified = modify_sample(def, base, forcing, &res.clamped_pixels);
  res.baseline_lst = predict_stack(params, base.inputs);
  res.predicted_lst = predict_stack(params, modified.inputs);
  res.diff = prediction_diff(res.predicted_lst, res.baseline_lst);
  res.bbox = def.region(base.width(), base.height());
  res.profile = vertical_profile(res.predicted_lst, res.bbox);
  res.stats = scenario_stats(res.diff, res.bbox);
  return res;
}

nlohmann::json ScenarioResult::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json prof = nlohmann::json::array();
  for (const auto& p : profile) {
    prof.push_back({{"row", p.row}, {"value_celsius", opt(p.value_celsius)}, {"inside_bbox", p.inside_bbox}});
  }
  return {{"scenario_id", scenario_id},
          {"width", diff.width()},
          {"height", diff.height()},
          {"bbox", uhi::to_json(bbox)},
          {"profile_column", bbox.center_col()},
          {"profile", prof},
          {"stats",
           {{"mean_delta_inside", opt(stats.mean_delta_inside)},
            {"mean_delta_outside_ring", opt(stats.mean_delta_outside_ring)},
            {"max_abs_delta", stats.max_abs_delta}}},
          {"clamped_pixels", clamped_pixels}};
}

}  // namespace uhi
