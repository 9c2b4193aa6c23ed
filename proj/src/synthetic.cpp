#include "uhi/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "uhi/error.hpp"
#include "uhi/rng.hpp"

namespace uhi {

namespace {

// Sum of three random sinusoid products, min-max rescaled to [lo, hi].
std::vector<double> smooth_field(Rng& rng, int size, double lo, double hi) {
  std::vector<double> f(static_cast<std::size_t>(size) * size, 0.0);
  for (int k = 0; k < 3; ++k) {
    const double fx = rng.uniform(0.3, 1.5), fy = rng.uniform(0.3, 1.5);
    const double px = rng.uniform(0.0, 6.28), py = rng.uniform(0.0, 6.28);
    for (int r = 0; r < size; ++r) {
      const double y = static_cast<double>(r) / size;
      for (int c = 0; c < size; ++c) {
        const double x = static_cast<double>(c) / size;
        f[static_cast<std::size_t>(r) * size + c] +=
            std::sin(2.0 * M_PI * fx * x + px) * std::cos(2.0 * M_PI * fy * y + py);
      }
    }
  }
  const auto [mn, mx] = std::minmax_element(f.begin(), f.end());
  const double lo_v = *mn, span = *mx - *mn + 1e-9;
  for (double& v : f) v = lo + (hi - lo) * (v - lo_v) / span;
  return f;
}

}  // namespace

int synthetic_lulc_class(double ndvi) {
  if (ndvi > 0.5) return 2;
  if (ndvi > 0.25) return 5;
  if (ndvi > 0.1) return 11;
  return 7;
}

std::vector<Sample> synthetic_samples(const SyntheticConfig& cfg) {
  if (cfg.count < 1 || cfg.size < 1 || cfg.noise_sigma < 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic config needs count >= 1, size >= 1, sigma >= 0");
  }
  Rng rng(cfg.seed);
  const int s = cfg.size;
  const std::size_t n = static_cast<std::size_t>(s) * s;
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    const auto v = smooth_field(rng, s, -0.1, 0.8);
    const auto bright = smooth_field(rng, s, 0.2, 0.6);
    const auto green_noise = smooth_field(rng, s, 0.0, 0.05);
    const auto blue_noise = smooth_field(rng, s, 0.0, 0.05);
    const auto swir = smooth_field(rng, s, 0.1, 0.4);
    const auto t2m = smooth_field(rng, s, 15.0, 25.0);

    std::vector<double> coastal(n), blue(n), green(n), red(n), nir(n), label(n), lulc(n);
    for (std::size_t k = 0; k < n; ++k) {
      nir[k] = bright[k] * (1.0 + v[k]) / 2.0;
      red[k] = bright[k] * (1.0 - v[k]) / 2.0;
      green[k] = red[k] * 1.1 + green_noise[k];
      blue[k] = red[k] * 0.9 + blue_noise[k];
      coastal[k] = blue[k] * 0.95;
      const double ndvi = (nir[k] - red[k]) / (nir[k] + red[k]);
      label[k] = cfg.intercept + cfg.slope * ndvi + cfg.noise_sigma * rng.normal();
      lulc[k] = synthetic_lulc_class(ndvi);
    }

    GeoRef geo{static_cast<double>(i) * s * 30.0, 0.0, 30.0, 30.0, "EPSG:32635"};
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04d", i);
    Sample smp;
    smp.id = id;
    smp.scene_id = id;
    smp.date = "2023-07-15";
    std::vector<std::pair<Role, Grid>> bands;
    bands.emplace_back(Role::coastal, Grid(s, s, geo, Units::reflectance, std::move(coastal)));
    bands.emplace_back(Role::blue, Grid(s, s, geo, Units::reflectance, std::move(blue)));
    bands.emplace_back(Role::green, Grid(s, s, geo, Units::reflectance, std::move(green)));
    bands.emplace_back(Role::red, Grid(s, s, geo, Units::reflectance, std::move(red)));
    bands.emplace_back(Role::nir, Grid(s, s, geo, Units::reflectance, std::move(nir)));
    bands.emplace_back(Role::swir1, Grid(s, s, geo, Units::reflectance, swir));
    bands.emplace_back(Role::t2m, Grid(s, s, geo, Units::celsius, t2m));
    smp.inputs = align_stack(std::move(bands));
    smp.label = Grid(s, s, geo, Units::celsius, std::move(label));
    smp.lulc = Grid(s, s, geo, Units::class_id, std::move(lulc));
    out.push_back(std::move(smp));
  }
  return out;
}

}  // namespace uhi
