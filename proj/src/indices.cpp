#include "uhi/indices.hpp"

#include <cmath>

#include "uhi/error.hpp"

namespace uhi {

std::string_view to_string(IndexKind k) {
  switch (k) {
    case IndexKind::NDVI: return "NDVI";
    case IndexKind::NDBI: return "NDBI";
    case IndexKind::NDWI: return "NDWI";
  }
  return "?";
}

IndexKind index_kind_from_string(std::string_view s) {
  if (s == "NDVI" || s == "ndvi") return IndexKind::NDVI;
  if (s == "NDBI" || s == "ndbi") return IndexKind::NDBI;
  if (s == "NDWI" || s == "ndwi") return IndexKind::NDWI;
  throw Error(ErrorCode::InvalidArgument, "unknown index kind '" + std::string(s) + "'");
}

IndexBands index_bands(IndexKind kind) {
  switch (kind) {
    case IndexKind::NDVI: return {Role::nir, Role::red};
    case IndexKind::NDBI: return {Role::swir1, Role::nir};
    case IndexKind::NDWI: return {Role::green, Role::nir};
  }
  throw Error(ErrorCode::InvalidArgument, "bad index kind");
}

Grid normalized_difference(const Grid& a, const Grid& b) {
  if (!a.same_geometry(b)) throw Error(ErrorCode::GeoMismatch, "index inputs not co-registered");
  Grid out(a.width(), a.height(), a.georef(), Units::index);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.is_nodata(i) || b.is_nodata(i)) {
      out.set_nodata(i);
      continue;
    }
    const double sum = a[i] + b[i];
    if (sum == 0.0) {
      out.set_nodata(i);
      continue;
    }
    out.set(i, (a[i] - b[i]) / sum);
  }
  return out;
}

Grid compute_index(const BandStack& stack, IndexKind kind) {
  const IndexBands roles = index_bands(kind);
  return normalized_difference(stack.get(roles.a), stack.get(roles.b));
}

void SplitWindowCoeffs::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "emissivity must lie in (0, 1]");
  }
  if (!(std::abs(delta_epsilon) < 0.05)) {
    throw Error(ErrorCode::InvalidArgument, "|delta emissivity| must be below 0.05");
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite split-window coefficient");
  }
}

nlohmann::json to_json(const SplitWindowCoeffs& c) {
  nlohmann::json j;
  j["name"] = c.name;
  for (int i = 0; i < 8; ++i) j["b" + std::to_string(i)] = c.b[i];
  j["epsilon"] = c.epsilon;
  j["delta_epsilon"] = c.delta_epsilon;
  if (c.water_vapor) j["water_vapor"] = *c.water_vapor;
  return j;
}

SplitWindowCoeffs split_window_from_json(const nlohmann::json& j) {
  SplitWindowCoeffs c;
  try {
    c.name = j.value("name", std::string("custom"));
    for (int i = 0; i < 8; ++i) c.b[i] = j.value("b" + std::to_string(i), 0.0);
    c.epsilon = j.at("epsilon").get<double>();
    c.delta_epsilon = j.value("delta_epsilon", 0.0);
    if (j.contains("water_vapor") && !j["water_vapor"].is_null()) c.water_vapor = j["water_vapor"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("split-window coefficients: ") + e.what());
  }
  c.validate();
  return c;
}

SplitWindowCoeffs default_split_window_coeffs() {
  SplitWindowCoeffs c;
  c.name = "Du-2015-style defaults";
  c.b = {-0.41165, 1.00522, 0.14543, -0.27297, 4.06655, -6.92512, -18.27461, 0.24468};
  c.epsilon = 0.97;
  c.delta_epsilon = 0.002;
  return c;
}

double split_window_kelvin(double t10, double t11, const SplitWindowCoeffs& c) {
  const double e = c.epsilon, de = c.delta_epsilon;
  const double a = (1.0 - e) / e;
  const double d = de / (e * e);
  const double mean = (t10 + t11) / 2.0;
  const double half_diff = (t10 - t11) / 2.0;
  const double diff = t10 - t11;
  return c.b[0] + (c.b[1] + c.b[2] * a + c.b[3] * d) * mean +
         (c.b[4] + c.b[5] * a + c.b[6] * d) * half_diff + c.b[7] * diff * diff;
}

Grid split_window_lst(const Grid& tb10, const Grid& tb11, const SplitWindowCoeffs& coeffs) {
  coeffs.validate();
  if (!tb10.same_geometry(tb11)) throw Error(ErrorCode::GeoMismatch, "tb10 and tb11 not co-registered");
  Grid out(tb10.width(), tb10.height(), tb10.georef(), Units::celsius);
  for (std::size_t i = 0; i < tb10.size(); ++i) {
    if (tb10.is_nodata(i) || tb11.is_nodata(i)) {
      out.set_nodata(i);
      continue;
    }
    out.set(i, split_window_kelvin(tb10[i], tb11[i], coeffs) - kKelvinOffset);
  }
  return out;
}

Grid brightness_temperature(const Grid& dn, double rad_mult, double rad_add, double k1, double k2) {
  if (!(k1 > 0.0) || !(k2 > 0.0) || rad_mult < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "brightness temperature constants must be positive");
  }
  Grid out(dn.width(), dn.height(), dn.georef(), Units::kelvin);
  for (std::size_t i = 0; i < dn.size(); ++i) {
    if (dn.is_nodata(i)) {
      out.set_nodata(i);
      continue;
    }
    const double radiance = rad_mult * dn[i] + rad_add;
    if (!(radiance > 0.0)) {
      out.set_nodata(i);
      continue;
    }
    out.set(i, k2 / std::log(k1 / radiance + 1.0));
  }
  return out;
}

}  // namespace uhi
