#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uhi/catalog.hpp"
#include "uhi/raster.hpp"

namespace uhi {

enum class SplitProtocol { random, high_heat };
enum class SplitSet { train, val, test };

std::string_view to_string(SplitProtocol p);
std::string_view to_string(SplitSet s);
SplitProtocol split_protocol_from_string(std::string_view s);
SplitSet split_set_from_string(std::string_view s);

struct SplitPlan {
  SplitProtocol protocol = SplitProtocol::random;
  std::map<std::string, SplitSet> assignments;
  std::optional<double> threshold_celsius;
  std::optional<double> percentile;
  std::uint64_t seed = 0;

  // Ids of one set, in lexicographic order.
  std::vector<std::string> ids(SplitSet s) const;
  std::size_t count(SplitSet s) const;
  nlohmann::json to_json() const;
  static SplitPlan from_json(const nlohmann::json& j);
};

struct SplitRatios {
  double train = 0.72;
  double val = 0.18;
  double test = 0.10;
};

// Seeded shuffle of `ids`, then floor counts with the remainder handed out
// round-robin to train, val, test.
SplitPlan random_split(std::span<const std::string> ids, SplitRatios ratios, std::uint64_t seed);

// Mean of the non-nodata label pixels; NoValidPixels when there are none.
double tile_mean_lst(const Sample& s);

// Nearest-rank percentile threshold over the statistics; samples strictly
// above it form the test set, the rest split 80/20 into train/val.
SplitPlan heat_split(std::span<const std::pair<std::string, double>> statistics, double percentile,
                     std::uint64_t seed);
SplitPlan heat_split(std::span<const Sample> samples, double percentile, std::uint64_t seed);

double nearest_rank_percentile(std::vector<double> values, double percentile);

struct ClassMetrics {
  int class_id = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double mse = 0.0;
  double share_percent = 0.0;
  std::size_t n_pixels = 0;
};

struct MetricReport {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  std::size_t n_pixels = 0;
  std::vector<ClassMetrics> per_class;  // ascending class id, present classes only

  nlohmann::json to_json() const;
  // Per-class table: LULC Class, MAE, RMSE, MSE, LULC Distribution (%).
  std::string to_csv() const;
};

std::string lulc_class_name(int class_id);

// Streams pixels from many grids into one pooled report.
class MetricAccumulator {
 public:
  // `mask` (optional) selects pixels with a non-zero byte; `lulc` (optional)
  // enables the per-class table.
  void add(const Grid& pred, const Grid& truth, std::span<const std::uint8_t> mask = {},
           const Grid* lulc = nullptr);
  MetricReport finish() const;

 private:
  struct Sums {
    double abs = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
  };
  Sums total_;
  std::map<int, Sums> classes_;
  bool per_class_ = false;
};

MetricReport metrics(const Grid& pred, const Grid& truth, std::span<const std::uint8_t> mask = {});
MetricReport per_lulc_metrics(const Grid& pred, const Grid& truth, const Grid& lulc);

// Max non-nodata prediction minus the threshold; not clamped.
double extrapolation_capacity(std::span<const Grid> predictions, double threshold_celsius);

}  // namespace uhi
