#pragma once

#include <cstdint>
#include <vector>

#include "uhi/catalog.hpp"

namespace uhi {

// Smooth random landscapes whose label is linear in NDVI:
//   lst = intercept + slope * ndvi + N(0, noise_sigma)
struct SyntheticConfig {
  int count = 500;
  int size = 64;
  double intercept = 10.0;
  double slope = 20.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;
};

// LULC follows NDVI: > 0.5 trees (2), > 0.25 crops (5), > 0.1 rangeland
// (11), otherwise built area (7).
std::vector<Sample> synthetic_samples(const SyntheticConfig& config);

int synthetic_lulc_class(double ndvi);

}  // namespace uhi
