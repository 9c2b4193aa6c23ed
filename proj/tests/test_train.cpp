#include <gtest/gtest.h>

#include <cmath>

#include "uhi/error.hpp"
#include "uhi/indices.hpp"
#include "uhi/synthetic.hpp"
#include "uhi/train.hpp"

using namespace uhi;

namespace {

TinyViTConfig small_config() {
  TinyViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.mlp_ratio = 2;
  return c;
}

std::vector<Sample> small_samples(int count = 24) {
  SyntheticConfig sc;
  sc.count = count;
  sc.size = 16;
  sc.seed = 3;
  return synthetic_samples(sc);
}

SplitPlan plan_for(const std::vector<Sample>& samples, std::uint64_t seed = 5) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return random_split(ids, SplitRatios{}, seed);
}

TrainSchedule quick(int epochs, int pretrain = 0) {
  TrainSchedule s;
  s.epochs = epochs;
  s.pretrain_epochs = pretrain;
  s.batch_size = 4;
  s.seed = 11;
  s.lr = 3e-3;
  s.pretrain_lr = 3e-3;
  return s;
}

std::vector<const Sample*> select(const std::vector<Sample>& samples, const SplitPlan& plan, SplitSet set) {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (plan.assignments.at(s.id) == set) out.push_back(&s);
  }
  return out;
}

bool same_weights(const Weights& a, const Weights& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (*ta[i].tensor != *tb[i].tensor) return false;
  }
  return true;
}

}  // namespace

TEST(Synthetic, LabelIsLinearInNdviUpToNoise) {
  SyntheticConfig sc;
  sc.count = 3;
  sc.size = 16;
  sc.noise_sigma = 0.0;
  const auto samples = synthetic_samples(sc);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[1].id, "syn-0001");
  for (const auto& s : samples) {
    const Grid ndvi = compute_index(s.inputs, IndexKind::NDVI);
    for (std::size_t i = 0; i < ndvi.size(); ++i) {
      ASSERT_NEAR(s.label[i], 10.0 + 20.0 * ndvi[i], 1e-9);
      ASSERT_EQ(s.lulc[i], synthetic_lulc_class(ndvi[i]));
    }
    EXPECT_NO_THROW(s.validate());
  }
  EXPECT_EQ(synthetic_lulc_class(0.6), 2);
  EXPECT_EQ(synthetic_lulc_class(0.3), 5);
  EXPECT_EQ(synthetic_lulc_class(0.2), 11);
  EXPECT_EQ(synthetic_lulc_class(0.05), 7);
}

TEST(Synthetic, SeededAndNoiseHasRequestedScale) {
  SyntheticConfig sc;
  sc.count = 4;
  sc.size = 32;
  const auto a = synthetic_samples(sc), b = synthetic_samples(sc);
  EXPECT_EQ(a[2].label, b[2].label);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& s : a) {
    const Grid ndvi = compute_index(s.inputs, IndexKind::NDVI);
    for (std::size_t i = 0; i < ndvi.size(); ++i) {
      const double r = s.label[i] - (10.0 + 20.0 * ndvi[i]);
      sum += r;
      sq += r * r;
      ++n;
    }
  }
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(NormStats, MatchesDirectComputation) {
  const auto samples = small_samples(4);
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const NormStats ns = compute_norm_stats(ptrs);
  ASSERT_EQ(ns.mean.size(), 7u);
  for (int c = 0; c < 7; ++c) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (const auto* s : ptrs) {
      const Grid& g = s->inputs.get(kInputRoles[c]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum += g[i];
        ++n;
      }
    }
    const double mean = sum / n;
    for (const auto* s : ptrs) {
      const Grid& g = s->inputs.get(kInputRoles[c]);
      for (std::size_t i = 0; i < g.size(); ++i) sq += (g[i] - mean) * (g[i] - mean);
    }
    EXPECT_NEAR(ns.mean[c], mean, 1e-12);
    EXPECT_NEAR(ns.stddev[c], std::sqrt(sq / n), 1e-12);
  }
  EXPECT_GT(ns.label_std, 0.0);
}

TEST(Train, EpochsZeroReturnsInitialisation) {
  const auto samples = small_samples();
  const SplitPlan plan = plan_for(samples);
  const TrainResult r = train(samples, plan, small_config(), quick(0));
  EXPECT_TRUE(r.log.entries.empty());
  EXPECT_EQ(r.best_epoch, 0);
  const auto tr = select(samples, plan, SplitSet::train);
  const ModelParams init = initial_params(small_config(), tr, 11);
  EXPECT_TRUE(same_weights(r.params.weights, init.weights));
  EXPECT_EQ(r.params.norm.label_mean, init.norm.label_mean);
}

TEST(Train, SameSeedGivesIdenticalLogAndWeights) {
  const auto samples = small_samples();
  const SplitPlan plan = plan_for(samples);
  const TrainResult a = train(samples, plan, small_config(), quick(3, 2));
  const TrainResult b = train(samples, plan, small_config(), quick(3, 2));
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_TRUE(same_weights(a.params.weights, b.params.weights));
  TrainSchedule threaded = quick(3, 2);
  threaded.workers = 3;
  const TrainResult c = train(samples, plan, small_config(), threaded);
  EXPECT_EQ(a.log, c.log);
  EXPECT_TRUE(same_weights(a.params.weights, c.params.weights));
  TrainSchedule other = quick(3, 2);
  other.seed = 12;
  EXPECT_NE(train(samples, plan, small_config(), other).log, a.log);
}

TEST(Train, LogShapeAndBestEpochSelection) {
  const auto samples = small_samples();
  const SplitPlan plan = plan_for(samples);
  std::vector<LogEntry> seen;
  const TrainResult r = train(samples, plan, small_config(), quick(6, 2), nullptr,
                              [&](const LogEntry& e) { seen.push_back(e); });
  ASSERT_EQ(r.log.entries.size(), 8u);
  EXPECT_EQ(seen, r.log.entries);
  EXPECT_EQ(r.log.entries[0].phase, "pretrain");
  EXPECT_FALSE(r.log.entries[1].val_mae.has_value());
  EXPECT_EQ(r.log.entries[2].phase, "finetune");
  EXPECT_EQ(r.log.entries[2].epoch, 1);

  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : r.log.entries) {
    if (e.phase != "finetune") continue;
    ASSERT_TRUE(e.val_mae.has_value());
    if (*e.val_mae < best) {
      best = *e.val_mae;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(*r.best_val_mae, best);
  EXPECT_EQ(evaluate_mae(r.params, select(samples, plan, SplitSet::val)), best);
  EXPECT_EQ(r.log.to_csv().substr(0, 25), "epoch,phase,loss,val_mae\n");
}

TEST(Train, FinetuningLowersValidationError) {
  const auto samples = small_samples(40);
  const SplitPlan plan = plan_for(samples);
  const auto val = select(samples, plan, SplitSet::val);
  const double before = evaluate_mae(initial_params(small_config(), select(samples, plan, SplitSet::train), 11), val);
  const TrainResult r = train(samples, plan, small_config(), quick(15));
  EXPECT_LT(*r.best_val_mae, 0.5 * before);
}

TEST(Train, EmptyTrainSplit) {
  const auto samples = small_samples(4);
  SplitPlan plan = plan_for(samples);
  for (auto& [id, set] : plan.assignments) set = SplitSet::val;
  try {
    train(samples, plan, small_config(), quick(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(Train, InitWeightsAreReused) {
  const auto samples = small_samples();
  const SplitPlan plan = plan_for(samples);
  ModelParams init = initial_params(small_config(), select(samples, plan, SplitSet::train), 99);
  const TrainResult r = train(samples, plan, small_config(), quick(0), &init);
  EXPECT_TRUE(same_weights(r.params.weights, init.weights));
}

TEST(Schedule, JsonRoundTripAndValidation) {
  TrainSchedule s = quick(7, 3);
  s.workers = 2;
  const TrainSchedule back = train_schedule_from_json(to_json(s));
  EXPECT_EQ(back.epochs, 7);
  EXPECT_EQ(back.pretrain_epochs, 3);
  EXPECT_EQ(back.lr, 3e-3);
  EXPECT_EQ(back.workers, 2);
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), Error);
}
