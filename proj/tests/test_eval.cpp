#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "uhi/error.hpp"
#include "uhi/eval.hpp"
#include "uhi/synthetic.hpp"

using namespace uhi;

namespace {

const GeoRef kGeo{0.0, 0.0, 30.0, 30.0, "EPSG:32635"};

std::vector<std::string> ids_of(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03d", i);
    ids.push_back(buf);
  }
  return ids;
}

Grid row(std::vector<double> v, Units u = Units::celsius) {
  const int w = static_cast<int>(v.size());
  return Grid(w, 1, kGeo, u, std::move(v));
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

struct Fixture {
  Grid pred, truth, lulc;
  std::vector<std::uint8_t> mask;
};

Fixture random_fixture(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-5.0, 45.0);
  const int classes[] = {1, 2, 4, 5, 7, 8, 10, 11};
  Fixture f{Grid(16, 16, kGeo, Units::celsius), Grid(16, 16, kGeo, Units::celsius),
            Grid(16, 16, kGeo, Units::class_id), std::vector<std::uint8_t>(256, 1)};
  for (std::size_t i = 0; i < 256; ++i) {
    f.pred.set(i, u(rng));
    f.truth.set(i, u(rng));
    f.lulc.set(i, classes[rng() % 8]);
    if (rng() % 13 == 0) f.pred.set_nodata(i);
    if (rng() % 17 == 0) f.truth.set_nodata(i);
    if (rng() % 19 == 0) f.mask[i] = 0;
  }
  return f;
}

}  // namespace

TEST(RandomSplit, HundredSamples) {
  const auto plan = random_split(ids_of(100), SplitRatios{}, 1);
  EXPECT_EQ(plan.count(SplitSet::train), 72u);
  EXPECT_EQ(plan.count(SplitSet::val), 18u);
  EXPECT_EQ(plan.count(SplitSet::test), 10u);
}

TEST(RandomSplit, TenSamplesRemainderGoesToTrainFirst) {
  const auto plan = random_split(ids_of(10), SplitRatios{}, 1);
  EXPECT_EQ(plan.count(SplitSet::train), 8u);
  EXPECT_EQ(plan.count(SplitSet::val), 1u);
  EXPECT_EQ(plan.count(SplitSet::test), 1u);
}

TEST(RandomSplit, DeterministicPartition) {
  const auto ids = ids_of(57);
  const auto a = random_split(ids, SplitRatios{}, 9), b = random_split(ids, SplitRatios{}, 9);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_NE(a.assignments, random_split(ids, SplitRatios{}, 10).assignments);
  EXPECT_EQ(a.assignments.size(), 57u);
  EXPECT_EQ(a.count(SplitSet::train) + a.count(SplitSet::val) + a.count(SplitSet::test), 57u);
  // 41.04, 10.26, 5.7 -> 41, 10, 5, remainder 1 to train
  EXPECT_EQ(a.count(SplitSet::train), 42u);
}

TEST(RandomSplit, ErrorsAndJson) {
  EXPECT_EQ(code_of([] { random_split({}, SplitRatios{}, 1); }), ErrorCode::EmptyCatalog);
  EXPECT_EQ(code_of([] { random_split(ids_of(3), SplitRatios{0.5, 0.5, 0.1}, 1); }), ErrorCode::InvalidArgument);
  const auto plan = random_split(ids_of(20), SplitRatios{}, 4);
  const auto back = SplitPlan::from_json(plan.to_json());
  EXPECT_EQ(back.assignments, plan.assignments);
  EXPECT_EQ(back.protocol, SplitProtocol::random);
  EXPECT_EQ(plan.to_json()["counts"]["test"], plan.count(SplitSet::test));
  EXPECT_TRUE(plan.to_json()["threshold_celsius"].is_null());
}

TEST(NearestRank, Examples) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(nearest_rank_percentile(v, 90), 90.0);
  EXPECT_EQ(nearest_rank_percentile(v, 100), 100.0);
  EXPECT_EQ(nearest_rank_percentile({15, 20, 35, 40, 50}, 30), 20.0);
  EXPECT_EQ(nearest_rank_percentile({15, 20, 35, 40, 50}, 40), 20.0);
  EXPECT_EQ(nearest_rank_percentile({15, 20, 35, 40, 50}, 50), 35.0);
  EXPECT_EQ(nearest_rank_percentile({15, 20, 35, 40, 50}, 1), 15.0);
}

TEST(NearestRank, MatchesBruteForceDefinition) {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = static_cast<double>(rng() % 50);
    const double p = 1.0 + static_cast<double>(rng() % 100);
    // Smallest value with at least p% of the data at or below it.
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    double expected = sorted.back();
    for (double c : sorted) {
      std::size_t at_or_below = 0;
      for (double x : v) at_or_below += x <= c;
      if (100.0 * static_cast<double>(at_or_below) >= p * static_cast<double>(v.size())) {
        expected = c;
        break;
      }
    }
    ASSERT_EQ(nearest_rank_percentile(v, p), expected) << "p=" << p << " n=" << v.size();
  }
}

TEST(HeatSplit, StatisticsOneToHundred) {
  std::vector<std::pair<std::string, double>> stats;
  const auto ids = ids_of(100);
  for (int i = 0; i < 100; ++i) stats.emplace_back(ids[i], i + 1.0);
  const auto plan = heat_split(stats, 90, 3);
  ASSERT_TRUE(plan.threshold_celsius);
  EXPECT_EQ(*plan.threshold_celsius, 90.0);
  EXPECT_EQ(plan.protocol, SplitProtocol::high_heat);
  std::set<double> test_stats;
  double max_trainval = -1;
  for (const auto& [id, v] : stats) {
    if (plan.assignments.at(id) == SplitSet::test) {
      test_stats.insert(v);
    } else {
      max_trainval = std::max(max_trainval, v);
    }
  }
  std::set<double> expected;
  for (int i = 91; i <= 100; ++i) expected.insert(i);
  EXPECT_EQ(test_stats, expected);
  EXPECT_LE(max_trainval, 90.0);
  EXPECT_EQ(plan.count(SplitSet::val), 18u);
  EXPECT_EQ(plan.count(SplitSet::train), 72u);
}

TEST(HeatSplit, Degenerate) {
  const std::vector<std::pair<std::string, double>> stats = {{"a", 20.0}, {"b", 20.0}, {"c", 20.0}};
  EXPECT_EQ(code_of([&] { heat_split(stats, 90, 1); }), ErrorCode::DegenerateDistribution);
}

TEST(HeatSplit, SafetyPropertyOnRandomStatistics) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<std::string, double>> stats;
    const int n = 2 + static_cast<int>(rng() % 60);
    const auto ids = ids_of(n);
    for (int i = 0; i < n; ++i) stats.emplace_back(ids[i], static_cast<double>(rng() % 30));
    if (std::all_of(stats.begin(), stats.end(), [&](auto& s) { return s.second == stats[0].second; })) continue;
    const auto plan = heat_split(stats, 50 + static_cast<double>(rng() % 50), trial);
    ASSERT_EQ(plan.assignments.size(), stats.size());
    for (const auto& [id, v] : stats) {
      if (plan.assignments.at(id) == SplitSet::test) {
        ASSERT_GT(v, *plan.threshold_celsius);
      } else {
        ASSERT_LE(v, *plan.threshold_celsius);
      }
    }
  }
}

TEST(HeatSplit, UsesTileMeanOfSamples) {
  SyntheticConfig sc;
  sc.count = 30;
  sc.size = 16;
  const auto samples = synthetic_samples(sc);
  const auto plan = heat_split(samples, 90, 1);
  for (const auto& s : samples) {
    const bool hot = tile_mean_lst(s) > *plan.threshold_celsius;
    EXPECT_EQ(plan.assignments.at(s.id) == SplitSet::test, hot);
  }
  EXPECT_EQ(plan.count(SplitSet::test), 3u);
  const auto back = SplitPlan::from_json(plan.to_json());
  EXPECT_EQ(back.threshold_celsius, plan.threshold_celsius);
  EXPECT_EQ(back.percentile, 90.0);
}

TEST(TileMean, IgnoresNodataAndRejectsEmpty) {
  Sample s;
  s.id = "x";
  s.label = row({10.0, 20.0, 99.0});
  s.label.set_nodata(2);
  EXPECT_EQ(tile_mean_lst(s), 15.0);
  s.label.set_nodata(0);
  s.label.set_nodata(1);
  EXPECT_EQ(code_of([&] { tile_mean_lst(s); }), ErrorCode::NoValidPixels);
}

TEST(Metrics, Examples) {
  const Grid t = row({1.0, 2.0});
  const MetricReport zero = metrics(t, t);
  EXPECT_EQ(zero.mae, 0.0);
  EXPECT_EQ(zero.mse, 0.0);
  EXPECT_EQ(zero.rmse, 0.0);
  const MetricReport r = metrics(row({2.0, 4.0}), t);
  EXPECT_DOUBLE_EQ(r.mae, 1.5);
  EXPECT_DOUBLE_EQ(r.mse, 2.5);
  EXPECT_NEAR(r.rmse, 1.5811, 1e-4);
  EXPECT_EQ(r.n_pixels, 2u);
}

TEST(Metrics, NoValidPixels) {
  Grid p = row({1.0, 2.0}), t = row({1.0, 2.0});
  p.set_nodata(0);
  t.set_nodata(1);
  EXPECT_EQ(code_of([&] { metrics(p, t); }), ErrorCode::NoValidPixels);
  const std::vector<std::uint8_t> none = {0, 0};
  EXPECT_EQ(code_of([&] { metrics(row({1, 2}), row({1, 2}), none); }), ErrorCode::NoValidPixels);
}

TEST(Metrics, GeometryMismatch) {
  EXPECT_EQ(code_of([] { metrics(row({1, 2}), row({1, 2, 3})); }), ErrorCode::GeoMismatch);
}

TEST(PerLulc, SharesAndClassMae) {
  const Grid truth = row({0.0, 0.0, 0.0, 0.0});
  const Grid pred = row({1.0, 3.0, 5.0, -2.0});
  const Grid lulc = row({7, 7, 7, 2}, Units::class_id);
  const MetricReport r = per_lulc_metrics(pred, truth, lulc);
  ASSERT_EQ(r.per_class.size(), 2u);
  EXPECT_EQ(r.per_class[0].class_id, 2);
  EXPECT_DOUBLE_EQ(r.per_class[0].share_percent, 25.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].share_percent, 75.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].mae, 3.0);

  const MetricReport two = per_lulc_metrics(row({1.0, -3.0}), row({0.0, 0.0}), row({5, 5}, Units::class_id));
  EXPECT_DOUBLE_EQ(two.per_class[0].mae, 2.0);
}

TEST(PerLulc, CsvMirrorsTableColumns) {
  const MetricReport r = per_lulc_metrics(row({1.0, 3.0, 5.0, -2.0}), row({0, 0, 0, 0}), row({7, 7, 7, 2}, Units::class_id));
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "LULC Class,MAE,RMSE,MSE,LULC Distribution (%)");
  EXPECT_NE(csv.find("Class 2 (Trees),2.000000,2.000000,4.000000,25.00\n"), std::string::npos);
  EXPECT_NE(csv.find("Class 7 (Built Area),3.000000,"), std::string::npos);
  const auto j = r.to_json();
  EXPECT_EQ(j["per_class"][1]["name"], "Built Area");
  EXPECT_EQ(j["per_class"][1]["n_pixels"], 3);
}

TEST(PerLulc, ClassNames) {
  const std::map<int, std::string> expected = {{1, "Water"},  {2, "Trees"},       {4, "Flooded Vegetation"},
                                               {5, "Crops"},  {7, "Built Area"},  {8, "Bare Ground"},
                                               {10, "Clouds"}, {11, "Rangeland"}};
  for (const auto& [id, name] : expected) EXPECT_EQ(lulc_class_name(id), name);
}

TEST(MetricsOracle, BruteForceLoopOnRandomFixtures) {
  std::mt19937 rng(31337);
  for (int trial = 0; trial < 100; ++trial) {
    const Fixture f = random_fixture(rng);
    double abs = 0, sq = 0;
    std::size_t n = 0;
    std::map<int, std::array<double, 3>> cls;
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        const std::size_t i = static_cast<std::size_t>(r * 16 + c);
        if (f.pred.is_nodata(r, c) || f.truth.is_nodata(r, c) || !f.mask[i]) continue;
        const double e = f.pred.at(r, c) - f.truth.at(r, c);
        abs += std::fabs(e);
        sq += e * e;
        ++n;
        auto& k = cls[static_cast<int>(f.lulc.at(r, c))];
        k[0] += std::fabs(e);
        k[1] += e * e;
        k[2] += 1;
      }
    }
    const MetricReport m = metrics(f.pred, f.truth, f.mask);
    ASSERT_EQ(m.n_pixels, n);
    ASSERT_NEAR(m.mae, abs / n, 1e-9);
    ASSERT_NEAR(m.mse, sq / n, 1e-9);
    ASSERT_NEAR(m.rmse, std::sqrt(sq / n), 1e-9);

    MetricAccumulator acc;
    acc.add(f.pred, f.truth, f.mask, &f.lulc);
    const MetricReport p = acc.finish();
    ASSERT_EQ(p.per_class.size(), cls.size());
    double share_sum = 0, pooled_mse = 0, pooled_mae = 0;
    for (const auto& c : p.per_class) {
      const auto& k = cls.at(c.class_id);
      ASSERT_NEAR(c.mae, k[0] / k[2], 1e-9);
      ASSERT_NEAR(c.mse, k[1] / k[2], 1e-9);
      ASSERT_NEAR(c.rmse, std::sqrt(k[1] / k[2]), 1e-9);
      ASSERT_NEAR(c.share_percent, 100.0 * k[2] / n, 1e-9);
      share_sum += c.share_percent;
      pooled_mse += c.mse * static_cast<double>(c.n_pixels);
      pooled_mae += c.mae * static_cast<double>(c.n_pixels);
    }
    ASSERT_NEAR(share_sum, 100.0, 0.01);
    // Count-weighted class means reproduce the pooled figures up to rounding.
    ASSERT_NEAR(pooled_mse / n, p.mse, 1e-12 * p.mse);
    ASSERT_NEAR(pooled_mae / n, p.mae, 1e-12 * p.mae);
  }
}

TEST(MetricsOracle, RmseDoesNotPoolLikeMse) {
  const MetricReport r = per_lulc_metrics(row({1.0, 3.0, 3.0}), row({0, 0, 0}), row({1, 2, 2}, Units::class_id));
  const double averaged_rmse = (r.per_class[0].rmse * 1 + r.per_class[1].rmse * 2) / 3;
  EXPECT_GT(std::fabs(averaged_rmse - r.rmse), 0.1);
}

TEST(Extrapolation, PublishedArithmetic) {
  const Grid preds[] = {row({20.0, 26.91}), row({25.0})};
  EXPECT_NEAR(extrapolation_capacity(preds, 23.29), 3.62, 1e-9);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", extrapolation_capacity(preds, 23.29));
  EXPECT_STREQ(buf, "3.62");
}

TEST(Extrapolation, BoundaryAndSign) {
  const Grid at[] = {row({23.29, 10.0})};
  EXPECT_EQ(extrapolation_capacity(at, 23.29), 0.0);
  const Grid below[] = {row({22.0, 21.5})};
  EXPECT_EQ(extrapolation_capacity(below, 23.0), -1.0);
  Grid masked = row({99.0, 22.0});
  masked.set_nodata(0);
  const Grid m[] = {masked};
  EXPECT_EQ(extrapolation_capacity(m, 23.0), -1.0);
  masked.set_nodata(1);
  const Grid empty[] = {masked};
  EXPECT_EQ(code_of([&] { extrapolation_capacity(empty, 23.0); }), ErrorCode::NoValidPixels);
}
