#include "uhi/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "uhi/error.hpp"
#include "uhi/rng.hpp"

namespace uhi {

void TrainSchedule::validate() const {
  if (pretrain_epochs < 0 || epochs < 0 || epochs > 100000) {
    throw Error(ErrorCode::InvalidArgument, "epoch counts must be non-negative");
  }
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be at least 1");
  if (!(lr > 0) || !(pretrain_lr > 0) || weight_decay < 0) {
    throw Error(ErrorCode::InvalidArgument, "learning rates must be positive and weight decay non-negative");
  }
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");
}

nlohmann::json to_json(const TrainSchedule& s) {
  return {{"pretrain_epochs", s.pretrain_epochs}, {"epochs", s.epochs}, {"batch_size", s.batch_size},
          {"seed", s.seed},       {"lr", s.lr},          {"pretrain_lr", s.pretrain_lr},
          {"weight_decay", s.weight_decay}, {"workers", s.workers}};
}

TrainSchedule train_schedule_from_json(const nlohmann::json& j) {
  TrainSchedule s;
  s.pretrain_epochs = j.value("pretrain_epochs", s.pretrain_epochs);
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.lr = j.value("lr", s.lr);
  s.pretrain_lr = j.value("pretrain_lr", s.pretrain_lr);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.workers = j.value("workers", s.workers);
  s.validate();
  return s;
}

std::string TrainingLog::to_csv() const {
  std::string out = "epoch,phase,loss,val_mae\n";
  char buf[128];
  for (const auto& e : entries) {
    if (e.val_mae) {
      std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g\n", e.epoch, e.phase.c_str(), e.loss, *e.val_mae);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%s,%.17g,\n", e.epoch, e.phase.c_str(), e.loss);
    }
    out += buf;
  }
  return out;
}

NormStats compute_norm_stats(std::span<const Sample* const> samples, int in_channels) {
  if (in_channels != static_cast<int>(std::size(kInputRoles))) {
    throw Error(ErrorCode::ShapeMismatch, "normalization expects the seven input channels");
  }
  NormStats n;
  auto moments = [](auto&& visit) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    visit([&](double v) {
      sum += v;
      sq += v * v;
      ++count;
    });
    if (count == 0) return std::pair{0.0, 1.0};
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
    const double sd = std::sqrt(var);
    return std::pair{mean, sd > 1e-12 ? sd : 1.0};
  };
  for (Role role : kInputRoles) {
    const auto [m, s] = moments([&](auto&& f) {
      for (const Sample* smp : samples) {
        const Grid& g = smp->inputs.get(role);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (!g.is_nodata(i)) f(g[i]);
        }
      }
    });
    n.mean.push_back(m);
    n.stddev.push_back(s);
  }
  const auto [lm, ls] = moments([&](auto&& f) {
    for (const Sample* smp : samples) {
      for (std::size_t i = 0; i < smp->label.size(); ++i) {
        if (!smp->label.is_nodata(i)) f(smp->label[i]);
      }
    }
  });
  n.label_mean = lm;
  n.label_std = ls;
  return n;
}

TokenExample regress_example(const ModelParams& params, const Sample& s) {
  TokenExample ex;
  ex.tokens = input_tokens(params, s.inputs);
  ex.grid = token_grid_for(params.config, s.width(), s.height());
  const int p = params.config.patch_size;
  ex.label = Mat::Zero(ex.grid.count(), p * p);
  ex.label_valid = Mat::Zero(ex.grid.count(), p * p);
  for (int r = 0; r < ex.grid.rows * p; ++r) {
    for (int c = 0; c < ex.grid.cols * p; ++c) {
      if (s.label.is_nodata(r, c)) continue;
      const int t = (r / p) * ex.grid.cols + c / p, k = (r % p) * p + c % p;
      ex.label(t, k) = (s.label.at(r, c) - params.norm.label_mean) / params.norm.label_std;
      ex.label_valid(t, k) = 1.0;
    }
  }
  return ex;
}

TokenExample mae_example(const ModelParams& params, const Sample& s) {
  TokenExample ex;
  ex.tokens = input_tokens(params, s.inputs);
  ex.grid = token_grid_for(params.config, s.width(), s.height());
  ex.targets = ex.tokens;
  return ex;
}

double evaluate_mae(const ModelParams& params, std::span<const Sample* const> samples) {
  MetricAccumulator acc;
  for (const Sample* s : samples) acc.add(forward_regress(params, s->inputs), s->label);
  return acc.finish().mae;
}

ModelParams initial_params(const TinyViTConfig& config, std::span<const Sample* const> train, std::uint64_t seed,
                           const ModelParams* init) {
  ModelParams p = init_params(config, seed);
  if (init) {
    const nlohmann::json a = to_json(init->config), b = to_json(config);
    if (a != b) throw Error(ErrorCode::ShapeMismatch, "initial checkpoint config differs from the requested config");
    p.weights = init->weights;
  }
  p.norm = compute_norm_stats(train, config.in_channels);
  return p;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// One epoch over `examples` in a seeded order; returns the sample-weighted
// mean batch loss.
double run_epoch(ModelParams& params, OptState& opt, std::vector<TokenExample>& examples, Objective objective,
                 const TrainSchedule& schedule, Rng& rng) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  double weighted = 0.0;
  std::vector<TokenExample> batch;
  for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
    batch.clear();
    for (std::size_t i = start; i < end; ++i) {
      TokenExample& ex = examples[order[i]];
      if (objective == Objective::mae) ex.masked = random_mask(ex.grid.count(), params.config.mask_ratio, rng);
      batch.push_back(ex);
    }
    GradResult g = backward(params, batch, objective, 1.0, schedule.workers);
    if (!g.grads.all_finite()) throw Error(ErrorCode::NonFiniteLoss, "non-finite gradient");
    adamw_step(params.weights, g.grads, opt);
    if (!params.weights.all_finite()) throw Error(ErrorCode::NonFiniteLoss, "parameters became non-finite");
    weighted += g.loss * static_cast<double>(end - start);
  }
  return weighted / static_cast<double>(order.size());
}

}  // namespace

TrainResult train(std::span<const Sample> samples, const SplitPlan& plan, const TinyViTConfig& config,
                  const TrainSchedule& schedule, const ModelParams* init, const EpochCallback& on_epoch) {
  config.validate();
  schedule.validate();
  std::vector<const Sample*> train_set, val_set;
  for (const Sample& s : samples) {
    const auto it = plan.assignments.find(s.id);
    if (it == plan.assignments.end()) continue;
    if (it->second == SplitSet::train) train_set.push_back(&s);
    if (it->second == SplitSet::val) val_set.push_back(&s);
  }
  if (train_set.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");

  TrainResult result;
  result.params = initial_params(config, train_set, schedule.seed, init);
  ModelParams& params = result.params;
  Rng rng(derive_seed(schedule.seed, 1));

  if (schedule.pretrain_epochs > 0) {
    std::vector<TokenExample> examples;
    for (const Sample* s : train_set) examples.push_back(mae_example(params, *s));
    OptState opt = init_opt_state(params.weights, {schedule.pretrain_lr, 0.9, 0.999, 1e-8, schedule.weight_decay});
    for (int e = 1; e <= schedule.pretrain_epochs; ++e) {
      LogEntry entry{e, "pretrain", run_epoch(params, opt, examples, Objective::mae, schedule, rng), std::nullopt};
      result.log.entries.push_back(entry);
      if (on_epoch) on_epoch(entry);
    }
  }
  if (schedule.epochs == 0) return result;

  std::vector<TokenExample> examples;
  for (const Sample* s : train_set) examples.push_back(regress_example(params, *s));
  OptState opt = init_opt_state(params.weights, {schedule.lr, 0.9, 0.999, 1e-8, schedule.weight_decay});
  Weights best = params.weights;
  for (int e = 1; e <= schedule.epochs; ++e) {
    LogEntry entry{e, "finetune", run_epoch(params, opt, examples, Objective::regress, schedule, rng), std::nullopt};
    if (!val_set.empty()) entry.val_mae = evaluate_mae(params, val_set);
    result.log.entries.push_back(entry);
    if (on_epoch) on_epoch(entry);
    const bool better = !entry.val_mae || !result.best_val_mae || *entry.val_mae < *result.best_val_mae;
    if (better) {
      result.best_epoch = e;
      result.best_val_mae = entry.val_mae;
      best = params.weights;
    }
  }
  params.weights = std::move(best);
  return result;
}

}  // namespace uhi
