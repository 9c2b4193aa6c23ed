// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>

#include <unistd.h>

#include "model_fixtures.hpp"
#include "uhi/checkpoint.hpp"
#include "uhi/error.hpp"
#include "uhi/eval.hpp"
#include "uhi/geotiff.hpp"
#include "uhi/indices.hpp"
#include "uhi/scenario.hpp"
#include "uhi/service.hpp"
#include "uhi/store.hpp"
#include "uhi/synthetic.hpp"
#include "uhi/train.hpp"

#include <httplib.h>

using namespace uhi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#include "tiff_fixtures.inc"

// Pinned tolerances and budgets.
constexpr double kGeoTiffBudgetSeconds = 5.0;
constexpr int kGeoTiffGrids = 50;
constexpr int kIndexPairs = 10000;
constexpr double kIndexArithmeticTol = 1e-9;
constexpr double kNdviExampleTol = 1e-6;
constexpr double kGradCheckStep = 1e-3;
constexpr double kGradCheckTol = 1e-4;
constexpr int kGradCheckSeeds = 5;
constexpr double kGradCheckBudgetSeconds = 60.0;
constexpr double kSyntheticMaeTarget = 0.5;
constexpr double kSyntheticBaselineRatio = 10.0;
constexpr double kSyntheticBudgetSeconds = 15 * 60.0;
constexpr double kExtrapolationTol = 1e-9;
constexpr int kMetricFixtures = 100;
constexpr double kMetricTol = 1e-9;
constexpr double kPooledIdentityRelTol = 1e-12;
constexpr double kShareSumTol = 0.01;
constexpr double kRetargetTol = 1e-6;
constexpr double kDirectionMinExpected = 1.0;  // degC of generator response a swap must imply

const GeoRef kGeo{500000.0, 5000000.0, 30.0, 30.0, "EPSG:32635"};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && pass) {
      pass = false;
      detail = what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome geotiff_round_trip() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(20240715);
  std::uniform_real_distribution<float> u(-1000.0f, 1000.0f);
  for (int trial = 0; trial < kGeoTiffGrids; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 67);
    const int h = 1 + static_cast<int>(rng() % 53);
    Grid g(w, h, GeoRef{1000.0 * trial, -500.0 * trial, 30.0, 30.0, "EPSG:32635"}, Units::celsius);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (rng() % 7 == 0) {
        g.set_nodata(i);
      } else {
        g.set(i, static_cast<double>(u(rng)));
      }
    }
    const Grid grids[] = {g};
    const auto img = decode_geotiff(encode_geotiff(grids), Units::reflectance);
    o.require(img.grids.size() == 1 && img.grids[0] == g, fmt("grid %d (%dx%d) not bit-exact", trial, w, h));
  }
  const auto fix = decode_geotiff(std::vector<std::uint8_t>(kFixtureRaw, kFixtureRaw + sizeof kFixtureRaw));
  const Grid& f = fix.grids.at(0);
  o.require(f.width() == 2 && f.height() == 2 && f.at(0, 0) == 1.5 && f.at(0, 1) == 2.5 && f.at(1, 0) == 3.5 &&
                f.at(1, 1) == 4.5,
            "hex fixture values differ");
  const double dt = seconds_since(t0);
  o.require(dt < kGeoTiffBudgetSeconds, fmt("took %.2f s", dt));
  if (o.pass) o.detail = fmt("%d grids bit-exact, fixture decodes, %.2f s", kGeoTiffGrids, dt);
  return o;
}

Outcome index_correctness() {
  Outcome o;
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Grid a(100, 100, kGeo, Units::reflectance), b(100, 100, kGeo, Units::reflectance);
  for (int i = 0; i < kIndexPairs; ++i) {
    a.set(static_cast<std::size_t>(i), u(rng));
    b.set(static_cast<std::size_t>(i), u(rng));
  }
  const Grid ab = normalized_difference(a, b), ba = normalized_difference(b, a);
  double worst = 0.0;
  for (std::size_t i = 0; i < ab.size(); ++i) {
    o.require(!ab.is_nodata(i) && ab[i] >= -1.0 && ab[i] <= 1.0, fmt("pair %zu out of range", i));
    o.require(ab[i] == -ba[i], fmt("pair %zu not antisymmetric", i));
    worst = std::max(worst, std::fabs(ab[i] - (a[i] - b[i]) / (a[i] + b[i])));
  }
  o.require(worst <= kIndexArithmeticTol, fmt("direct arithmetic differs by %.3g", worst));
  const Grid nir(1, 1, kGeo, Units::reflectance, 0.5), red(1, 1, kGeo, Units::reflectance, 0.1);
  const double ndvi = normalized_difference(nir, red).at(0, 0);
  o.require(std::fabs(ndvi - 0.666667) <= kNdviExampleTol, fmt("NDVI(0.5, 0.1) = %.9f", ndvi));
  if (o.pass) o.detail = fmt("%d pairs, max arithmetic error %.2g, NDVI(0.5,0.1) = %.6f", kIndexPairs, worst, ndvi);
  return o;
}

Outcome split_window() {
  Outcome o;
  SplitWindowCoeffs deg;
  deg.name = "degenerate";
  deg.b = {0, 1, 0, 0, 0, 0, 0, 0};
  deg.epsilon = 1.0;
  deg.delta_epsilon = 0.0;
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> t(250.0, 330.0);
  for (int i = 0; i < 1000; ++i) {
    const double t10 = t(rng), t11 = t(rng);
    o.require(split_window_kelvin(t10, t11, deg) == (t10 + t11) / 2.0, fmt("mean not exact at %.3f/%.3f", t10, t11));
  }
  const SplitWindowCoeffs c = default_split_window_coeffs();
  const double e = c.epsilon, a = (1 - e) / e, d = c.delta_epsilon / (e * e);
  const double s1 = c.b[1] + c.b[2] * a + c.b[3] * d;
  const double s4 = c.b[4] + c.b[5] * a + c.b[6] * d;
  int checked = 0, skipped = 0;
  for (double t11 = 250.0; t11 <= 330.0; t11 += 1.0) {
    double prev = 0.0;
    bool have_prev = false;
    for (double t10 = 250.0; t10 <= 330.0; t10 += 0.25) {
      if (s1 / 2 + s4 / 2 + 2 * c.b[7] * (t10 - t11) <= 0.0) {
        have_prev = false;
        ++skipped;
        continue;
      }
      const double v = split_window_kelvin(t10, t11, c);
      if (have_prev) {
        o.require(v > prev, fmt("not increasing at T10=%.2f T11=%.2f", t10, t11));
        ++checked;
      }
      prev = v;
      have_prev = true;
    }
  }
  if (o.pass) {
    o.detail = fmt("degenerate mean exact on 1000 pairs; %d monotone steps over 250-330 K (%d points with T10-T11 < %.2f K excluded)",
                   checked, skipped, -(s1 + s4) / (4 * c.b[7]));
  }
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const TinyViTConfig cfg = uhi::testing::tiny_config();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (int seed = 1; seed <= kGradCheckSeeds; ++seed) {
    const ModelParams p = uhi::testing::random_params(cfg, static_cast<std::uint64_t>(seed));
    Rng rng(static_cast<std::uint64_t>(seed) * 977);
    const std::vector<TokenExample> batch = {uhi::testing::random_example(cfg, rng),
                                             uhi::testing::random_example(cfg, rng)};
    for (Objective obj : {Objective::mae, Objective::regress}) {
      const auto r = uhi::testing::gradient_check(p, batch, obj, kGradCheckStep);
      checked += r.checked;
      if (r.max_tensor_rel_error > worst) {
        worst = r.max_tensor_rel_error;
        where = fmt("seed %d %s %s", seed, obj == Objective::mae ? "mae" : "regress", r.worst_tensor.c_str());
      }
    }
  }
  const double dt = seconds_since(t0);
  o.require(worst < kGradCheckTol, fmt("max relative error %.3g at %s", worst, where.c_str()));
  o.require(dt < kGradCheckBudgetSeconds, fmt("took %.1f s", dt));
  if (o.pass) {
    o.detail = fmt("%d seeds x 2 objectives, %zu entries, max per-tensor relative error %.2g (%s), %.1f s",
                   kGradCheckSeeds, checked, worst, where.c_str(), dt);
  }
  return o;
}

bool weights_equal(const Weights& a, const Weights& b) {
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (*ta[i].tensor != *tb[i].tensor) return false;
  }
  return true;
}

Outcome masked_locality() {
  Outcome o;
  const TinyViTConfig cfg = uhi::testing::tiny_config();
  int perturbed = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ModelParams p = uhi::testing::random_params(cfg, seed);
    Rng rng(seed + 100);
    std::vector<TokenExample> batch = {uhi::testing::random_example(cfg, rng), uhi::testing::random_example(cfg, rng)};
    const GradResult before = backward(p, batch, Objective::mae);
    for (auto& ex : batch) {
      std::set<int> masked(ex.masked.begin(), ex.masked.end());
      for (int t = 0; t < ex.grid.count(); ++t) {
        if (!masked.count(t)) {
          ex.targets.row(t) = uhi::testing::random_mat(rng, 1, ex.targets.cols()) * 1e3;
          ++perturbed;
        }
      }
    }
    const GradResult after = backward(p, batch, Objective::mae);
    o.require(before.loss == after.loss, fmt("seed %d: loss changed", static_cast<int>(seed)));
    o.require(weights_equal(before.grads, after.grads), fmt("seed %d: a gradient changed", static_cast<int>(seed)));
  }
  if (o.pass) o.detail = fmt("%d unmasked target tokens perturbed over 5 seeds; loss and gradients identical", perturbed);
  return o;
}

std::vector<const Sample*> select(const std::vector<Sample>& samples, const SplitPlan& plan, SplitSet set) {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (plan.assignments.at(s.id) == set) out.push_back(&s);
  }
  return out;
}

Outcome synthetic_learning() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;  // 500 patches of 64x64, lst = 10 + 20 ndvi + N(0, 0.1)
  const auto samples = synthetic_samples(sc);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const SplitPlan plan = random_split(ids, SplitRatios{}, 7);
  const TinyViTConfig cfg;  // default model
  TrainSchedule sched;      // 100 epochs, batch 16, lr 6e-5
  sched.seed = 3;
  const auto val = select(samples, plan, SplitSet::val);
  const double baseline = evaluate_mae(initial_params(cfg, select(samples, plan, SplitSet::train), sched.seed), val);
  const TrainResult r = train(samples, plan, cfg, sched);
  const double mae = *r.best_val_mae;
  const double dt = seconds_since(t0);
  o.require(sched.epochs == 100 && sched.batch_size == 16 && sched.lr == 6e-5, "schedule differs from 100/16/6e-5");
  o.require(mae < kSyntheticMaeTarget, fmt("val MAE %.4f", mae));
  o.require(baseline >= kSyntheticBaselineRatio * mae, fmt("baseline %.4f is only %.2fx val MAE %.4f", baseline,
                                                           baseline / mae, mae));
  o.require(dt < kSyntheticBudgetSeconds, fmt("took %.0f s", dt));
  if (o.pass) {
    o.detail = fmt("val MAE %.4f degC at epoch %d, untrained baseline %.4f (%.1fx), %.0f s", mae, r.best_epoch,
                   baseline, baseline / mae, dt);
  }
  return o;
}

Outcome high_heat() {
  Outcome o;
  std::vector<std::pair<std::string, double>> stats;
  for (int i = 1; i <= 100; ++i) stats.emplace_back(fmt("t%03d", i), static_cast<double>(i));
  const SplitPlan plan = heat_split(stats, 90, 3);
  o.require(plan.threshold_celsius && *plan.threshold_celsius == 90.0, "threshold is not 90");
  std::set<int> test;
  double max_trainval = -1e300;
  for (const auto& [id, v] : stats) {
    if (plan.assignments.at(id) == SplitSet::test) {
      test.insert(static_cast<int>(v));
    } else {
      max_trainval = std::max(max_trainval, v);
    }
  }
  std::set<int> expected;
  for (int i = 91; i <= 100; ++i) expected.insert(i);
  o.require(test == expected, "test set is not {91..100}");
  o.require(max_trainval <= 90.0, fmt("train/val statistic %.1f exceeds the threshold", max_trainval));

  // Same protocol on synthetic tiles whose mean LST is 1..100.
  std::vector<Sample> tiles;
  for (int i = 1; i <= 100; ++i) {
    Sample s;
    s.id = s.scene_id = fmt("tile%03d", i);
    std::vector<std::pair<Role, Grid>> bands;
    for (Role r : kInputRoles) bands.emplace_back(r, Grid(4, 4, kGeo, r == Role::t2m ? Units::celsius : Units::reflectance, 0.2));
    s.inputs = align_stack(std::move(bands));
    s.label = Grid(4, 4, kGeo, Units::celsius, static_cast<double>(i));
    s.label.set(0, 0, i - 0.5);
    s.label.set(0, 1, i + 0.5);
    s.lulc = Grid(4, 4, kGeo, Units::class_id, 2.0);
    tiles.push_back(std::move(s));
  }
  const SplitPlan tp = heat_split(tiles, 90, 5);
  std::size_t hot = 0;
  for (const auto& s : tiles) {
    const bool is_test = tp.assignments.at(s.id) == SplitSet::test;
    hot += is_test;
    o.require(is_test == (tile_mean_lst(s) > 90.0), "tile " + s.id + " on the wrong side");
  }
  o.require(hot == 10 && *tp.threshold_celsius == 90.0, "tile split is not 10 above 90");

  Grid preds(2, 1, kGeo, Units::celsius, std::vector<double>{20.0, 26.91});
  const double cap = extrapolation_capacity(std::span(&preds, 1), 23.29);
  o.require(std::fabs(cap - 3.62) <= kExtrapolationTol && fmt("%.2f", cap) == "3.62",
            fmt("extrapolation capacity %.12f", cap));
  if (o.pass) o.detail = fmt("threshold 90, test {91..100}, max train/val 90, tiles agree; 26.91 - 23.29 = %.2f", cap);
  return o;
}

Outcome metrics_oracle() {
  Outcome o;
  std::mt19937 rng(31337);
  std::uniform_real_distribution<double> u(-5.0, 45.0);
  const int classes[] = {1, 2, 4, 5, 7, 8, 10, 11};
  double worst_metric = 0.0, worst_pool = 0.0, worst_share = 0.0;
  for (int trial = 0; trial < kMetricFixtures; ++trial) {
    Grid pred(16, 16, kGeo, Units::celsius), truth(16, 16, kGeo, Units::celsius), lulc(16, 16, kGeo, Units::class_id);
    std::vector<std::uint8_t> mask(256, 1);
    for (std::size_t i = 0; i < 256; ++i) {
      pred.set(i, u(rng));
      truth.set(i, u(rng));
      lulc.set(i, classes[rng() % 8]);
      if (rng() % 13 == 0) pred.set_nodata(i);
      if (rng() % 17 == 0) truth.set_nodata(i);
      if (rng() % 19 == 0) mask[i] = 0;
    }
    double abs = 0, sq = 0;
    std::size_t n = 0;
    std::map<int, std::array<double, 3>> cls;
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 16; ++c) {
        if (pred.is_nodata(r, c) || truth.is_nodata(r, c) || !mask[static_cast<std::size_t>(r * 16 + c)]) continue;
        const double e = pred.at(r, c) - truth.at(r, c);
        abs += std::fabs(e);
        sq += e * e;
        ++n;
        auto& k = cls[static_cast<int>(lulc.at(r, c))];
        k[0] += std::fabs(e);
        k[1] += e * e;
        k[2] += 1;
      }
    }
    MetricAccumulator acc;
    acc.add(pred, truth, mask, &lulc);
    const MetricReport m = acc.finish();
    o.require(m.n_pixels == n && m.per_class.size() == cls.size(), fmt("fixture %d: pixel or class count", trial));
    worst_metric = std::max({worst_metric, std::fabs(m.mae - abs / n), std::fabs(m.mse - sq / n),
                             std::fabs(m.rmse - std::sqrt(sq / n))});
    double shares = 0, pooled = 0;
    for (const auto& c : m.per_class) {
      const auto it = cls.find(c.class_id);
      if (it == cls.end()) {
        o.require(false, fmt("fixture %d: unexpected class %d", trial, c.class_id));
        continue;
      }
      const auto& k = it->second;
      worst_metric = std::max({worst_metric, std::fabs(c.mae - k[0] / k[2]), std::fabs(c.mse - k[1] / k[2]),
                               std::fabs(c.rmse - std::sqrt(k[1] / k[2])),
                               std::fabs(c.share_percent - 100.0 * k[2] / n)});
      shares += c.share_percent;
      pooled += c.mse * static_cast<double>(c.n_pixels);
    }
    worst_pool = std::max(worst_pool, std::fabs(pooled / n - m.mse) / m.mse);
    worst_share = std::max(worst_share, std::fabs(shares - 100.0));
  }
  o.require(worst_metric <= kMetricTol, fmt("metric differs from the brute-force loop by %.3g", worst_metric));
  o.require(worst_pool <= kPooledIdentityRelTol, fmt("pooled MSE identity off by %.3g relative", worst_pool));
  o.require(worst_share <= kShareSumTol, fmt("shares sum off 100 by %.3g", worst_share));
  if (o.pass) {
    o.detail = fmt("%d fixtures: max metric error %.2g, pooled MSE identity %.2g relative, shares within %.2g of 100",
                   kMetricFixtures, worst_metric, worst_pool, worst_share);
  }
  return o;
}

Sample varied_sample(int w, int h, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.02, 0.6);
  Sample s;
  s.id = s.scene_id = "base";
  s.date = "2023-07-15";
  std::vector<std::pair<Role, Grid>> bands;
  for (Role r : kInputRoles) {
    Grid g(w, h, kGeo, r == Role::t2m ? Units::celsius : Units::reflectance);
    for (std::size_t i = 0; i < g.size(); ++i) g.set(i, r == Role::t2m ? 20.0 + 0.01 * static_cast<double>(i) : u(rng));
    bands.emplace_back(r, std::move(g));
  }
  s.inputs = align_stack(std::move(bands));
  s.label = Grid(w, h, kGeo, Units::celsius, 25.0);
  s.lulc = Grid(w, h, kGeo, Units::class_id, 2.0);
  return s;
}

ScenarioDef swap_def(Bbox b, DonorKind d, Spectrum spectrum = {}) {
  ScenarioDef def;
  def.scenario_id = "acc";
  def.base_sample_id = "base";
  def.modification = PixelSwap{b, d, std::move(spectrum)};
  return def;
}

Outcome scenario_invariants() {
  Outcome o;
  // No-op swap.
  const Sample base = varied_sample(16, 16, 1);
  const ModelParams params = uhi::testing::random_params(uhi::testing::tiny_config(), 4, 0.05);
  for (int k = 0; k < 5; ++k) {
    const Bbox b{k, 2 * k, 3, 4};
    Spectrum donor;
    for (Role r : kReflectanceRoles) donor[r] = base.inputs.get(r).at(b.row, b.col);
    Sample same = base;
    for (Role r : kReflectanceRoles) {
      for (int y = b.row; y < b.row + b.height; ++y) {
        for (int x = b.col; x < b.col + b.width; ++x) same.inputs.get_mut(r).set(y, x, donor[r]);
      }
    }
    const ScenarioResult res = run_scenario(swap_def(b, DonorKind::explicit_spectrum, donor), same, params);
    bool zero = true;
    for (std::size_t i = 0; i < res.diff.size(); ++i) zero = zero && res.diff[i] == 0.0;
    o.require(zero && res.stats.max_abs_delta == 0.0, fmt("no-op swap %d has a nonzero diff", k));
  }

  // Retarget round trip.
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> t(-0.95, 0.95);
  std::size_t checked = 0, clamped = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const Sample s = varied_sample(8, 8, static_cast<unsigned>(trial + 10));
    const IndexKind kind = static_cast<IndexKind>(trial % 3);
    const IndexBands ib = index_bands(kind);
    const Bbox b{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), 4, 4};
    const double target = t(rng);
    const RetargetResult r = index_retarget(s, b, kind, target, trial % 2 ? ib.a : ib.b, true);
    const Grid idx = compute_index(r.sample.inputs, kind);
    for (int y = b.row; y < b.row + b.height; ++y) {
      for (int x = b.col; x < b.col + b.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y * 8 + x);
        if (r.clamped[i]) {
          ++clamped;
          continue;
        }
        worst = std::max(worst, std::fabs(idx[i] - target));
        ++checked;
      }
    }
  }
  o.require(worst <= kRetargetTol, fmt("retarget misses target by %.3g", worst));

  // Identity forcing.
  ForcingRecord f;
  f.source = Source::cordex_rcp45;
  f.t2m[2050] = base.inputs.get(Role::t2m);
  ScenarioDef fdef;
  fdef.base_sample_id = "base";
  fdef.modification = Forcing{Source::cordex_rcp45, 2050, std::nullopt};
  const ScenarioResult ident = run_scenario(fdef, base, params, &f);
  o.require(ident.predicted_lst == ident.baseline_lst, "identity forcing changed the prediction");

  // Direction on a model fitted to a synthetic generator in which vegetation
  // cools: lst = 10 - 20 ndvi.
  SyntheticConfig sc;
  sc.count = 60;
  sc.size = 16;
  sc.slope = -20.0;
  sc.seed = 8;
  const auto samples = synthetic_samples(sc);
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  TrainSchedule sched;
  sched.epochs = 40;
  sched.batch_size = 8;
  sched.lr = 3e-3;
  sched.seed = 2;
  const TrainResult tr = train(samples, random_split(ids, SplitRatios{}, 1), uhi::testing::tiny_config(), sched);
  int forest_runs = 0, forest_cool = 0, urban_runs = 0, urban_warm = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const Bbox b{5, 5, 6, 6};
    const Grid ndvi = compute_index(s.inputs, IndexKind::NDVI);
    double inside = 0.0;
    for (int y = b.row; y < b.row + b.height; ++y) {
      for (int x = b.col; x < b.col + b.width; ++x) inside += ndvi.at(y, x);
    }
    inside /= b.width * b.height;
    for (DonorKind donor : {DonorKind::forest, DonorKind::urban}) {
      const int cls = donor == DonorKind::forest ? kForestClass : kUrbanClass;
      bool present = false;
      for (std::size_t k = 0; k < s.lulc.size(); ++k) present = present || s.lulc[k] == cls;
      if (!present) continue;
      const Spectrum d = derive_donor(s, s.lulc, cls);
      const double donor_ndvi = (d.at(Role::nir) - d.at(Role::red)) / (d.at(Role::nir) + d.at(Role::red));
      // Only swaps that really make the box greener (forest) or greyer (urban).
      const double expected = sc.slope * (donor_ndvi - inside);
      if (donor == DonorKind::forest ? expected > -kDirectionMinExpected : expected < kDirectionMinExpected) continue;
      const double delta = *run_scenario(swap_def(b, donor), s, tr.params).stats.mean_delta_inside;
      if (donor == DonorKind::forest) {
        ++forest_runs;
        forest_cool += delta < 0.0;
      } else {
        ++urban_runs;
        urban_warm += delta > 0.0;
      }
    }
  }
  o.require(forest_runs >= 5 && urban_runs >= 5, fmt("too few eligible swaps (%d forest, %d urban)", forest_runs, urban_runs));
  o.require(forest_cool == forest_runs, fmt("%d of %d forest swaps did not cool", forest_runs - forest_cool, forest_runs));
  o.require(urban_warm == urban_runs, fmt("%d of %d urban swaps did not warm", urban_runs - urban_warm, urban_runs));
  if (o.pass) {
    o.detail = fmt("no-op diff 0; retarget max error %.2g on %zu pixels (%zu clamped); identity forcing bit-exact; "
                   "forest cooled %d/%d, urban warmed %d/%d (model val MAE %.2f)",
                   worst, checked, clamped, forest_cool, forest_runs, urban_warm, urban_runs, *tr.best_val_mae);
  }
  return o;
}

Outcome service_contract() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / ("uhi_acceptance_store_" + std::to_string(::getpid()));
  fs::remove_all(root);
  {
    const Store store(root);
    SyntheticConfig sc;
    sc.count = 1;
    sc.size = 16;
    store.put_sample(synthetic_samples(sc).at(0));
    Checkpoint ck;
    ck.params = uhi::testing::random_params(uhi::testing::tiny_config(), 3, 0.05);
    store.put_checkpoint("default", ck);
  }
  ServiceConfig cfg;
  cfg.store_dir = root;
  cfg.port = 0;
  cfg.workers = 1;
  cfg.start_paused = true;  // holds the first job queued so the 409 path is observable
  Service service(cfg);
  const int port = service.start();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(30, 0);
  auto status = [](const httplib::Result& r) { return r ? r->status : -1; };
  auto bytes = [](const std::string& s) { return std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()); };

  const json body = {{"base_sample_id", "syn-0000"},
                     {"checkpoint_id", "default"},
                     {"modification",
                      {{"type", "pixel_swap"}, {"bbox", {{"row", 4}, {"col", 4}, {"height", 6}, {"width", 6}}}, {"donor", "urban"}}}};
  auto created = client.Post("/api/scenarios", body.dump(), "application/json");
  o.require(status(created) == 201, fmt("create returned %d", status(created)));
  std::string id, job_id;
  if (o.pass) id = json::parse(created->body).at("scenario_id");
  auto run = client.Post("/api/scenarios/" + id + "/run", "", "application/json");
  o.require(status(run) == 202, fmt("run returned %d", status(run)));
  if (o.pass) job_id = json::parse(run->body).at("job_id");
  const int conflict = status(client.Post("/api/scenarios/" + id + "/run", "", "application/json"));
  o.require(conflict == 409, fmt("second run while queued returned %d", conflict));
  service.resume_workers();

  std::string final_status;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(120);
  while (o.pass && std::chrono::steady_clock::now() < deadline) {
    auto j = client.Get("/api/jobs/" + job_id);
    if (status(j) != 200) break;
    final_status = json::parse(j->body).at("status");
    if (final_status == "done" || final_status == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  o.require(final_status == "done", "job ended as '" + final_status + "'");

  std::size_t compared = 0;
  if (o.pass) {
    std::vector<Grid> g;
    for (const char* which : {"predicted", "baseline", "diff"}) {
      auto r = client.Get("/api/results/" + id + "/" + which + ".tif");
      o.require(status(r) == 200, fmt("%s.tif returned %d", which, status(r)));
      if (o.pass) g.push_back(decode_geotiff(bytes(r->body), Units::celsius).grids.at(0));
    }
    if (o.pass) {
      for (std::size_t i = 0; i < g[0].size(); ++i) {
        if (g[2].is_nodata(i)) continue;
        o.require(g[2][i] == static_cast<double>(static_cast<float>(g[0][i] - g[1][i])),
                  fmt("diff != predicted - baseline at pixel %zu", i));
        ++compared;
      }
    }
  }
  const int missing = status(client.Get("/api/scenarios/does-not-exist"));
  o.require(missing == 404, fmt("unknown scenario returned %d", missing));
  const int missing_result = status(client.Get("/api/results/does-not-exist/diff.tif"));
  o.require(missing_result == 404, fmt("unknown result returned %d", missing_result));
  const int bad = status(client.Post("/api/scenarios", "{\"base_sample_id\": 3}", "application/json"));
  o.require(bad == 422, fmt("malformed body returned %d", bad));
  json oob = body;
  oob["modification"]["bbox"]["row"] = 14;
  const int out_of_bounds = status(client.Post("/api/scenarios", oob.dump(), "application/json"));
  o.require(out_of_bounds == 422, fmt("out-of-bounds bbox returned %d", out_of_bounds));
  const int ui = status(client.Get("/ui/"));
  o.require(ui == 404, fmt("/ui/ without assets returned %d", ui));
  service.stop();
  fs::remove_all(root);
  if (o.pass) {
    o.detail = fmt("201/202/409 then done; diff == predicted - baseline on %zu pixels; 404/422 verified; no UI built",
                   compared);
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"geotiff_round_trip", geotiff_round_trip},
      {"index_correctness", index_correctness},
      {"split_window_degenerate_and_monotone", split_window},
      {"gradient_check", gradient_check},
      {"masked_loss_locality", masked_locality},
      {"synthetic_learning", synthetic_learning},
      {"high_heat_protocol", high_heat},
      {"metrics_oracle", metrics_oracle},
      {"scenario_invariants", scenario_invariants},
      {"service_contract", service_contract},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
