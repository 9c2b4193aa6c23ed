#include "uhi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "uhi/error.hpp"
#include "uhi/rng.hpp"

namespace uhi {

std::string_view to_string(SplitProtocol p) { return p == SplitProtocol::random ? "random" : "high_heat"; }

std::string_view to_string(SplitSet s) {
  switch (s) {
    case SplitSet::train: return "train";
    case SplitSet::val: return "val";
    case SplitSet::test: return "test";
  }
  return "?";
}

SplitProtocol split_protocol_from_string(std::string_view s) {
  if (s == "random") return SplitProtocol::random;
  if (s == "high_heat" || s == "high-heat") return SplitProtocol::high_heat;
  throw Error(ErrorCode::InvalidArgument, "unknown split protocol '" + std::string(s) + "'");
}

SplitSet split_set_from_string(std::string_view s) {
  if (s == "train") return SplitSet::train;
  if (s == "val") return SplitSet::val;
  if (s == "test") return SplitSet::test;
  throw Error(ErrorCode::InvalidArgument, "unknown split set '" + std::string(s) + "'");
}

std::vector<std::string> SplitPlan::ids(SplitSet s) const {
  std::vector<std::string> out;
  for (const auto& [id, set] : assignments) {
    if (set == s) out.push_back(id);
  }
  return out;
}

std::size_t SplitPlan::count(SplitSet s) const {
  return static_cast<std::size_t>(
      std::count_if(assignments.begin(), assignments.end(), [s](const auto& kv) { return kv.second == s; }));
}

nlohmann::json SplitPlan::to_json() const {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [id, set] : assignments) a[id] = to_string(set);
  nlohmann::json j = {{"protocol", to_string(protocol)},
                      {"seed", seed},
                      {"assignments", a},
                      {"counts",
                       {{"train", count(SplitSet::train)},
                        {"val", count(SplitSet::val)},
                        {"test", count(SplitSet::test)}}}};
  j["threshold_celsius"] = threshold_celsius ? nlohmann::json(*threshold_celsius) : nlohmann::json(nullptr);
  if (percentile) j["percentile"] = *percentile;
  return j;
}

SplitPlan SplitPlan::from_json(const nlohmann::json& j) {
  SplitPlan p;
  p.protocol = split_protocol_from_string(j.at("protocol").get<std::string>());
  p.seed = j.value("seed", std::uint64_t{0});
  for (const auto& [id, set] : j.at("assignments").items()) p.assignments[id] = split_set_from_string(set.get<std::string>());
  if (j.contains("threshold_celsius") && !j["threshold_celsius"].is_null()) {
    p.threshold_celsius = j["threshold_celsius"].get<double>();
  }
  if (j.contains("percentile")) p.percentile = j["percentile"].get<double>();
  return p;
}

namespace {

std::size_t floor_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

}  // namespace

SplitPlan random_split(std::span<const std::string> ids, SplitRatios r, std::uint64_t seed) {
  if (ids.empty()) throw Error(ErrorCode::EmptyCatalog, "no samples to split");
  if (!(r.train > 0 && r.val > 0 && r.test > 0) || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "split ratios must be positive and sum to 1");
  }
  const std::size_t n = ids.size();
  std::size_t counts[3] = {floor_count(r.train, n), floor_count(r.val, n), floor_count(r.test, n)};
  std::size_t assigned = counts[0] + counts[1] + counts[2];
  for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++counts[k];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  SplitPlan plan;
  plan.protocol = SplitProtocol::random;
  plan.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const SplitSet s = i < counts[0] ? SplitSet::train : i < counts[0] + counts[1] ? SplitSet::val : SplitSet::test;
    if (!plan.assignments.emplace(ids[order[i]], s).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate sample id '" + ids[order[i]] + "'");
    }
  }
  return plan;
}

double tile_mean_lst(const Sample& s) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.label.size(); ++i) {
    if (!s.label.is_nodata(i)) {
      sum += s.label[i];
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::NoValidPixels, "sample '" + s.id + "' has no valid label pixels");
  return sum / static_cast<double>(n);
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
  if (values.empty()) throw Error(ErrorCode::EmptyCatalog, "no values for percentile");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "percentile must lie in (0, 100]");
  }
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(percentile / 100.0 * static_cast<double>(values.size()) - 1e-9);
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, values.size());
  return values[k - 1];
}

SplitPlan heat_split(std::span<const std::pair<std::string, double>> stats, double percentile, std::uint64_t seed) {
  if (stats.empty()) throw Error(ErrorCode::EmptyCatalog, "no samples to split");
  std::vector<double> values;
  for (const auto& [id, v] : stats) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite split statistic for '" + id + "'");
    values.push_back(v);
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) throw Error(ErrorCode::DegenerateDistribution, "all split statistics are equal");
  const double threshold = nearest_rank_percentile(values, percentile);

  SplitPlan plan;
  plan.protocol = SplitProtocol::high_heat;
  plan.seed = seed;
  plan.threshold_celsius = threshold;
  plan.percentile = percentile;
  std::vector<std::string> rest;
  for (const auto& [id, v] : stats) {
    if (v > threshold) {
      plan.assignments[id] = SplitSet::test;
    } else {
      rest.push_back(id);
    }
  }
  Rng rng(seed);
  rng.shuffle(rest);
  const std::size_t n_val = floor_count(0.2, rest.size());
  for (std::size_t i = 0; i < rest.size(); ++i) {
    plan.assignments[rest[i]] = i < rest.size() - n_val ? SplitSet::train : SplitSet::val;
  }
  if (plan.assignments.size() != stats.size()) throw Error(ErrorCode::InvalidArgument, "duplicate sample ids");
  return plan;
}

SplitPlan heat_split(std::span<const Sample> samples, double percentile, std::uint64_t seed) {
  std::vector<std::pair<std::string, double>> stats;
  for (const Sample& s : samples) stats.emplace_back(s.id, tile_mean_lst(s));
  return heat_split(stats, percentile, seed);
}

std::string lulc_class_name(int class_id) {
  switch (class_id) {
    case 1: return "Water";
    case 2: return "Trees";
    case 4: return "Flooded Vegetation";
    case 5: return "Crops";
    case 7: return "Built Area";
    case 8: return "Bare Ground";
    case 9: return "Snow/Ice";
    case 10: return "Clouds";
    case 11: return "Rangeland";
  }
  return "Unknown";
}

void MetricAccumulator::add(const Grid& pred, const Grid& truth, std::span<const std::uint8_t> mask,
                            const Grid* lulc) {
  if (!pred.same_geometry(truth) || (lulc && !lulc->same_geometry(truth))) {
    throw Error(ErrorCode::GeoMismatch, "metric grids are not co-registered");
  }
  if (!mask.empty() && mask.size() != truth.size()) {
    throw Error(ErrorCode::ShapeMismatch, "metric mask size does not match grid");
  }
  if (lulc) per_class_ = true;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred.is_nodata(i) || truth.is_nodata(i) || (!mask.empty() && mask[i] == 0)) continue;
    if (lulc && lulc->is_nodata(i)) continue;
    const double e = pred[i] - truth[i];
    total_.abs += std::abs(e);
    total_.sq += e * e;
    ++total_.n;
    if (lulc) {
      Sums& c = classes_[static_cast<int>(std::lround((*lulc)[i]))];
      c.abs += std::abs(e);
      c.sq += e * e;
      ++c.n;
    }
  }
}

MetricReport MetricAccumulator::finish() const {
  if (total_.n == 0) throw Error(ErrorCode::NoValidPixels, "no valid pixels to score");
  MetricReport r;
  const double n = static_cast<double>(total_.n);
  r.n_pixels = total_.n;
  r.mae = total_.abs / n;
  r.mse = total_.sq / n;
  r.rmse = std::sqrt(r.mse);
  if (per_class_) {
    for (const auto& [id, s] : classes_) {
      ClassMetrics c;
      const double k = static_cast<double>(s.n);
      c.class_id = id;
      c.n_pixels = s.n;
      c.mae = s.abs / k;
      c.mse = s.sq / k;
      c.rmse = std::sqrt(c.mse);
      c.share_percent = k / n * 100.0;
      r.per_class.push_back(c);
    }
  }
  return r;
}

MetricReport metrics(const Grid& pred, const Grid& truth, std::span<const std::uint8_t> mask) {
  MetricAccumulator acc;
  acc.add(pred, truth, mask);
  return acc.finish();
}

MetricReport per_lulc_metrics(const Grid& pred, const Grid& truth, const Grid& lulc) {
  MetricAccumulator acc;
  acc.add(pred, truth, {}, &lulc);
  return acc.finish();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"mae", mae}, {"mse", mse}, {"rmse", rmse}, {"n_pixels", n_pixels}};
  if (!per_class.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : per_class) {
      rows.push_back({{"class_id", c.class_id},
                      {"name", lulc_class_name(c.class_id)},
                      {"mae", c.mae},
                      {"rmse", c.rmse},
                      {"mse", c.mse},
                      {"share_percent", c.share_percent},
                      {"n_pixels", c.n_pixels}});
    }
    j["per_class"] = rows;
  }
  return j;
}

std::string MetricReport::to_csv() const {
  std::string out = "LULC Class,MAE,RMSE,MSE,LULC Distribution (%)\n";
  char buf[256];
  for (const auto& c : per_class) {
    std::snprintf(buf, sizeof buf, "Class %d (%s),%.6f,%.6f,%.6f,%.2f\n", c.class_id,
                  lulc_class_name(c.class_id).c_str(), c.mae, c.rmse, c.mse, c.share_percent);
    out += buf;
  }
  return out;
}

double extrapolation_capacity(std::span<const Grid> predictions, double threshold_celsius) {
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (const Grid& g : predictions) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!g.is_nodata(i)) {
        mx = std::max(mx, g[i]);
        any = true;
      }
    }
  }
  if (!any) throw Error(ErrorCode::NoValidPixels, "no valid predictions");
  return mx - threshold_celsius;
}

}  // namespace uhi
