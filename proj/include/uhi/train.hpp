#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uhi/catalog.hpp"
#include "uhi/eval.hpp"
#include "uhi/optim.hpp"
#include "uhi/vit.hpp"

namespace uhi {

struct TrainSchedule {
  int pretrain_epochs = 0;  // masked-autoencoder epochs before fine-tuning
  int epochs = 100;         // regression fine-tuning epochs
  int batch_size = 16;
  std::uint64_t seed = 0;
  double lr = 6e-5;
  double pretrain_lr = 6e-5;
  double weight_decay = 0.01;
  int workers = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainSchedule& s);
TrainSchedule train_schedule_from_json(const nlohmann::json& j);

struct LogEntry {
  int epoch = 0;          // 1-based within its phase
  std::string phase;      // "pretrain" | "finetune"
  double loss = 0.0;      // mean batch loss over the epoch
  std::optional<double> val_mae;

  bool operator==(const LogEntry&) const = default;
};

struct TrainingLog {
  std::vector<LogEntry> entries;

  std::string to_csv() const;
  bool operator==(const TrainingLog&) const = default;
};

struct TrainResult {
  ModelParams params;
  TrainingLog log;
  int best_epoch = 0;  // 0: the initial params were kept
  std::optional<double> best_val_mae;
};

// Per-channel mean/std of the inputs and of the label over valid pixels.
NormStats compute_norm_stats(std::span<const Sample* const> samples, int in_channels = 7);

TokenExample regress_example(const ModelParams& params, const Sample& s);
TokenExample mae_example(const ModelParams& params, const Sample& s);

// Pooled val MAE in celsius over valid label pixels.
double evaluate_mae(const ModelParams& params, std::span<const Sample* const> samples);

// Fresh parameters with normalization fitted on `train`; when `init` is
// given its weights are reused (its config must equal `config`).
ModelParams initial_params(const TinyViTConfig& config, std::span<const Sample* const> train,
                           std::uint64_t seed, const ModelParams* init = nullptr);

using EpochCallback = std::function<void(const LogEntry&)>;

// Optional MAE pretraining then regression fine-tuning; returns the params
// of the epoch with the lowest val MAE (earliest on ties). Deterministic for
// a fixed seed and any worker count.
TrainResult train(std::span<const Sample> samples, const SplitPlan& plan, const TinyViTConfig& config,
                  const TrainSchedule& schedule, const ModelParams* init = nullptr,
                  const EpochCallback& on_epoch = {});

}  // namespace uhi
