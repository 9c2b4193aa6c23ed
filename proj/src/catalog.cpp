#include "uhi/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "uhi/error.hpp"
#include "uhi/geotiff.hpp"
#include "uhi/sidecar.hpp"

namespace uhi {

namespace {
constexpr std::string_view kSourceNames[] = {"landsat8",     "era5", "cordex_rcp26", "cordex_rcp45",
                                             "cordex_rcp85", "lulc", "lst_label"};

std::string normalize_date(const std::string& raw) {
  std::string digits;
  for (char ch : raw) {
    if (std::isdigit(static_cast<unsigned char>(ch))) digits.push_back(ch);
  }
  if (digits.size() == 8) return digits.substr(0, 4) + "-" + digits.substr(4, 2) + "-" + digits.substr(6, 2);
  if (digits.size() == 4) return digits;
  throw Error(ErrorCode::InvalidArgument, "unrecognised date '" + raw + "'");
}
}  // namespace

std::string_view to_string(Source s) { return kSourceNames[static_cast<int>(s)]; }

Source source_from_string(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kSourceNames); ++i) {
    if (kSourceNames[i] == s) return static_cast<Source>(i);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown source '" + std::string(s) + "'");
}

int SceneRecord::year() const { return std::stoi(acquisition_date.substr(0, 4)); }

nlohmann::json to_json(const SceneRecord& r) {
  nlohmann::json j;
  j["scene_id"] = r.scene_id;
  j["acquisition_date"] = r.acquisition_date;
  j["hour"] = r.hour ? nlohmann::json(*r.hour) : nlohmann::json(nullptr);
  j["source"] = std::string(to_string(r.source));
  j["band_paths"] = nlohmann::json::object();
  for (const auto& [role, path] : r.band_paths) j["band_paths"][std::string(to_string(role))] = path.string();
  return j;
}

CatalogConfig CatalogConfig::defaults() {
  CatalogConfig c;
  NamingPattern landsat;
  landsat.source = Source::landsat8;
  landsat.regex = R"(^(LC0[89]_\w+?_(\d{8})_\w+?)_(?:SR_|ST_)?B(\d+)\.(?:tif|TIF|json)$)";
  landsat.scene_group = 1;
  landsat.date_group = 2;
  landsat.band_group = 3;
  landsat.bands = {{"1", Role::coastal}, {"2", Role::blue},  {"3", Role::green}, {"4", Role::red},
                   {"5", Role::nir},     {"6", Role::swir1}, {"10", Role::tb10}, {"11", Role::tb11}};
  c.patterns.push_back(landsat);

  NamingPattern era5;
  era5.source = Source::era5;
  era5.regex = R"(^era5_t2m_(\d{8})(?:_(\d{2}))?\.(?:tif|json)$)";
  era5.date_group = 1;
  era5.hour_group = 2;
  era5.role = Role::t2m;
  c.patterns.push_back(era5);

  NamingPattern lulc;
  lulc.source = Source::lulc;
  lulc.regex = R"(^lulc_(\d{4})\.(?:tif|json)$)";
  lulc.date_group = 1;
  lulc.role = Role::lulc;
  c.patterns.push_back(lulc);

  for (Source s : {Source::cordex_rcp26, Source::cordex_rcp45, Source::cordex_rcp85}) {
    NamingPattern p;
    p.source = s;
    p.regex = "^cordex_" + std::string(to_string(s)).substr(7) + R"(_(\d{4})\.(?:tif|json)$)";
    p.date_group = 1;
    p.role = Role::t2m;
    c.patterns.push_back(p);
  }
  return c;
}

CatalogConfig CatalogConfig::from_json(const nlohmann::json& j) {
  CatalogConfig c = j.contains("patterns") ? CatalogConfig{} : defaults();
  try {
    if (j.contains("patterns")) {
      for (const auto& jp : j["patterns"]) {
        NamingPattern p;
        p.source = source_from_string(jp.at("source").get<std::string>());
        p.regex = jp.at("regex").get<std::string>();
        p.scene_group = jp.value("scene_group", 0);
        p.date_group = jp.value("date_group", 0);
        p.hour_group = jp.value("hour_group", 0);
        p.band_group = jp.value("band_group", 0);
        if (jp.contains("bands")) {
          for (const auto& [k, v] : jp["bands"].items()) p.bands[k] = role_from_string(v.get<std::string>());
        }
        if (jp.contains("role")) p.role = role_from_string(jp["role"].get<std::string>());
        if (p.band_group == 0 && !p.role) {
          throw Error(ErrorCode::InvalidArgument, "pattern '" + p.regex + "' needs a band_group or a role");
        }
        c.patterns.push_back(std::move(p));
      }
    }
    if (j.contains("reflectance")) {
      const auto& jr = j["reflectance"];
      if (jr.contains("scale")) {
        // One scale/offset pair for all six reflectance bands.
        for (Role r : kReflectanceRoles) {
          c.reflectance[r] = {jr.at("scale").get<double>(), jr.value("offset", 0.0)};
        }
      } else {
        for (const auto& [k, v] : jr.items()) {
          c.reflectance[role_from_string(k)] = {v.at("scale").get<double>(), v.value("offset", 0.0)};
        }
      }
    }
    if (j.contains("thermal")) {
      for (const auto& [k, v] : j["thermal"].items()) {
        c.thermal[role_from_string(k)] = {v.at("rad_mult").get<double>(), v.at("rad_add").get<double>(),
                                          v.at("k1").get<double>(), v.at("k2").get<double>()};
      }
    }
    if (j.contains("nodata")) {
      for (const auto& [k, v] : j["nodata"].items()) {
        if (!v.is_null()) c.nodata[source_from_string(k)] = v.get<double>();
      }
    }
    if (j.contains("split_window")) c.split_window = split_window_from_json(j["split_window"]);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("catalog config: ") + e.what());
  }
  return c;
}

const SceneRecord* Catalog::find(std::string_view scene_id) const {
  for (const auto& r : records) {
    if (r.scene_id == scene_id) return &r;
  }
  return nullptr;
}

std::vector<const SceneRecord*> Catalog::by_source(Source s) const {
  std::vector<const SceneRecord*> out;
  for (const auto& r : records) {
    if (r.source == s) out.push_back(&r);
  }
  return out;
}

nlohmann::json Catalog::to_json() const {
  nlohmann::json j;
  j["root"] = root.string();
  j["records"] = nlohmann::json::array();
  for (const auto& r : records) j["records"].push_back(uhi::to_json(r));
  j["ignored"] = ignored;
  return j;
}

Catalog catalog_scan(const std::filesystem::path& directory, const CatalogConfig& config) {
  Catalog cat;
  cat.root = directory;
  cat.config = config;
  if (!std::filesystem::is_directory(directory)) {
    throw Error(ErrorCode::IoError, directory.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(directory)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::regex> compiled;
  for (const auto& p : config.patterns) compiled.emplace_back(p.regex);

  std::map<std::string, SceneRecord> by_id;
  for (const auto& file : files) {
    const std::string name = file.filename().string();
    const std::string rel = std::filesystem::relative(file, directory).string();
    if (file.extension() == ".bin") {
      auto header = file;
      header.replace_extension(".json");
      if (std::filesystem::exists(header)) continue;  // sidecar payload, described by its header
    }
    bool matched = false;
    for (std::size_t pi = 0; pi < compiled.size() && !matched; ++pi) {
      std::smatch m;
      if (!std::regex_match(name, m, compiled[pi])) continue;
      const NamingPattern& pat = config.patterns[pi];
      Role role;
      if (pat.band_group > 0) {
        auto it = pat.bands.find(m[pat.band_group].str());
        if (it == pat.bands.end()) continue;  // a band we do not ingest
        role = it->second;
      } else {
        role = *pat.role;
      }
      matched = true;
      const std::string scene_id = pat.scene_group > 0 ? m[pat.scene_group].str() : file.stem().string();
      const std::string date = pat.date_group > 0 ? normalize_date(m[pat.date_group].str()) : std::string();
      std::optional<int> hour;
      if (pat.hour_group > 0 && m[pat.hour_group].matched) hour = std::stoi(m[pat.hour_group].str());

      auto [it, inserted] = by_id.try_emplace(scene_id);
      SceneRecord& rec = it->second;
      if (inserted) {
        rec.scene_id = scene_id;
        rec.acquisition_date = date;
        rec.hour = hour;
        rec.source = pat.source;
      } else if (rec.source != pat.source || rec.acquisition_date != date) {
        throw Error(ErrorCode::DuplicateScene, "scene '" + scene_id + "' claimed by conflicting files");
      }
      if (!rec.band_paths.emplace(role, file).second) {
        throw Error(ErrorCode::DuplicateScene, "scene '" + scene_id + "' has two files for band '" +
                                                   std::string(to_string(role)) + "'");
      }
    }
    if (!matched) cat.ignored.push_back(rel);
  }
  for (auto& [id, rec] : by_id) cat.records.push_back(std::move(rec));
  std::sort(cat.records.begin(), cat.records.end(), [](const SceneRecord& a, const SceneRecord& b) {
    return std::make_tuple(to_string(a.source), a.acquisition_date, a.scene_id) <
           std::make_tuple(to_string(b.source), b.acquisition_date, b.scene_id);
  });
  std::sort(cat.ignored.begin(), cat.ignored.end());
  return cat;
}

void Sample::validate() const {
  for (Role r : kInputRoles) inputs.get(r);
  if (!label.same_geometry(inputs.bands().front().second) || !lulc.same_geometry(label)) {
    throw Error(ErrorCode::GeoMismatch, "sample '" + id + "' label/lulc not co-registered with inputs");
  }
}

Grid read_band(const std::filesystem::path& path, Units units) {
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") {
    SidecarRaster r = read_sidecar(path);
    Grid g = std::move(r.grids.front());
    g.set_units(units);
    return g;
  }
  GeoTiffImage img = read_geotiff(path, units);
  Grid g = std::move(img.grids.front());
  g.set_units(units);
  return g;
}

const SceneRecord* match_era5(const Catalog& catalog, const SceneRecord& landsat) {
  const SceneRecord* daily = nullptr;
  const SceneRecord* best = nullptr;
  int best_gap = 1 << 30;
  for (const SceneRecord* r : catalog.by_source(Source::era5)) {
    if (r->acquisition_date != landsat.acquisition_date) continue;
    if (!r->hour) {
      daily = r;
      continue;
    }
    if (!landsat.hour) continue;
    const int gap = std::abs(*r->hour - *landsat.hour);
    if (gap < best_gap) {
      best_gap = gap;
      best = r;
    }
  }
  return best ? best : daily;
}

const SceneRecord* match_lulc(const Catalog& catalog, const SceneRecord& landsat) {
  for (const SceneRecord* r : catalog.by_source(Source::lulc)) {
    if (r->year() == landsat.year()) return r;
  }
  return nullptr;
}

namespace {

void apply_fill(Grid& g, const CatalogConfig& cfg, Source s) {
  auto it = cfg.nodata.find(s);
  if (it == cfg.nodata.end()) return;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.is_nodata(i) && g[i] == it->second) g.set_nodata(i);
  }
}

const std::filesystem::path& band_path(const SceneRecord& rec, Role role) {
  auto it = rec.band_paths.find(role);
  if (it == rec.band_paths.end()) {
    throw Error(ErrorCode::MissingBand, "scene '" + rec.scene_id + "' has no '" +
                                            std::string(to_string(role)) + "' band");
  }
  return it->second;
}

}  // namespace

Sample build_sample(const SceneRecord& landsat, const SceneRecord& era5, const SceneRecord& lulc,
                    const Catalog& catalog) {
  const CatalogConfig& cfg = catalog.config;
  for (Role r : kReflectanceRoles) band_path(landsat, r);
  band_path(landsat, Role::tb10);
  band_path(landsat, Role::tb11);
  band_path(era5, Role::t2m);
  band_path(lulc, Role::lulc);
  if (era5.acquisition_date != landsat.acquisition_date) {
    throw Error(ErrorCode::DateMismatch, "ERA5 record " + era5.scene_id + " (" + era5.acquisition_date +
                                             ") does not match Landsat date " + landsat.acquisition_date);
  }
  if (lulc.year() != landsat.year()) {
    throw Error(ErrorCode::DateMismatch, "LULC year " + std::to_string(lulc.year()) +
                                             " does not match acquisition year " +
                                             std::to_string(landsat.year()));
  }

  std::vector<std::pair<Role, Grid>> bands;
  for (Role r : kReflectanceRoles) {
    Grid g = read_band(band_path(landsat, r), Units::reflectance);
    apply_fill(g, cfg, Source::landsat8);
    const auto sc = cfg.reflectance.count(r) ? cfg.reflectance.at(r) : BandScale{};
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.is_nodata(i)) g.set(i, std::clamp(g[i] * sc.scale + sc.offset, 0.0, 1.0));
    }
    bands.emplace_back(r, std::move(g));
  }
  const Grid& ref = bands.front().second;

  auto thermal = [&](Role r) {
    Grid g = read_band(band_path(landsat, r), Units::kelvin);
    apply_fill(g, cfg, Source::landsat8);
    if (auto it = cfg.thermal.find(r); it != cfg.thermal.end()) {
      const ThermalConstants& t = it->second;
      g = brightness_temperature(g, t.rad_mult, t.rad_add, t.k1, t.k2);
    }
    if (!g.same_geometry(ref)) {
      throw Error(ErrorCode::GeoMismatch, "thermal band '" + std::string(to_string(r)) +
                                              "' not co-registered with reflectance bands");
    }
    return g;
  };
  const Grid tb10 = thermal(Role::tb10);
  const Grid tb11 = thermal(Role::tb11);

  Grid t2m_k = read_band(band_path(era5, Role::t2m), Units::kelvin);
  apply_fill(t2m_k, cfg, Source::era5);
  Grid t2m = resample(t2m_k, ref.georef(), ref.width(), ref.height(), ResampleMethod::bilinear);
  for (std::size_t i = 0; i < t2m.size(); ++i) {
    if (!t2m.is_nodata(i)) t2m.set(i, t2m[i] - kKelvinOffset);
  }
  t2m.set_units(Units::celsius);
  bands.emplace_back(Role::t2m, std::move(t2m));

  Grid lulc_raw = read_band(band_path(lulc, Role::lulc), Units::class_id);
  apply_fill(lulc_raw, cfg, Source::lulc);
  Grid lulc_grid = resample(lulc_raw, ref.georef(), ref.width(), ref.height(), ResampleMethod::nearest);

  Sample s;
  s.id = landsat.scene_id;
  s.scene_id = landsat.scene_id;
  s.date = landsat.acquisition_date;
  s.label = split_window_lst(tb10, tb11, cfg.split_window);
  // A pixel without a label carries no usable input either.
  for (auto& [role, g] : bands) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (s.label.is_nodata(i)) g.set_nodata(i);
    }
  }
  s.inputs = align_stack(std::move(bands));
  s.lulc = std::move(lulc_grid);
  s.validate();
  return s;
}

std::vector<Sample> tile_sample(const Sample& sample, int size) {
  BandStack full = sample.inputs;
  full.put(Role::lst, sample.label);
  full.put(Role::lulc, sample.lulc);
  std::vector<Sample> out;
  for (Patch& p : tile(full, size, size)) {
    Sample s;
    s.id = sample.id + "_r" + std::to_string(p.origin_row) + "c" + std::to_string(p.origin_col);
    s.scene_id = sample.scene_id;
    s.date = sample.date;
    std::vector<std::pair<Role, Grid>> inputs;
    for (Role r : kInputRoles) inputs.emplace_back(r, p.stack.get(r));
    s.inputs = align_stack(std::move(inputs));
    s.label = p.stack.get(Role::lst);
    s.lulc = p.stack.get(Role::lulc);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uhi
