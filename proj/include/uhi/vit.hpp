#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "uhi/raster.hpp"

namespace uhi {

class Rng;

using Mat = Eigen::MatrixXd;

struct TinyViTConfig {
  int image_size = 64;  // side of the square sample patch the model sees
  int patch_size = 8;   // token side in pixels
  int embed_dim = 64;
  int num_heads = 2;
  int encoder_depth = 2;
  int decoder_depth = 1;
  int mlp_ratio = 4;
  int in_channels = 7;
  double mask_ratio = 0.75;

  void validate() const;
  int grid_side() const { return image_size / patch_size; }
  int num_tokens() const { return grid_side() * grid_side(); }
  int token_dim() const { return in_channels * patch_size * patch_size; }
  int pixels_per_token() const { return patch_size * patch_size; }
  int hidden_dim() const { return embed_dim * mlp_ratio; }
  int masked_count(int tokens) const;
};

nlohmann::json to_json(const TinyViTConfig& c);
TinyViTConfig vit_config_from_json(const nlohmann::json& j);

struct Linear {
  Mat w;  // in x out; y = x w + b
  Mat b;  // 1 x out
};

struct LayerNormParams {
  Mat g;  // 1 x dim
  Mat b;  // 1 x dim
};

struct BlockParams {
  LayerNormParams ln1;
  Linear qkv;
  Linear proj;
  LayerNormParams ln2;
  Linear fc1;
  Linear fc2;
};

// Every trainable tensor of the model. Gradients and optimizer moments use
// the same layout.
struct Weights {
  Linear patch_embed;
  Mat pos_embed;  // grid_side^2 x D, indexed by token (row * grid_side + col)
  std::vector<BlockParams> encoder;
  LayerNormParams enc_norm;

  // Masked-autoencoder decoder.
  Linear dec_embed;
  Mat mask_token;     // 1 x D
  Mat dec_pos_embed;  // grid_side^2 x D
  std::vector<BlockParams> decoder;
  LayerNormParams dec_norm;
  Linear dec_pred;  // D -> token_dim

  // Pixel-wise regression head: D -> patch_size^2 values per token.
  Linear head;

  struct Named {
    std::string name;
    Mat* tensor;
  };
  struct ConstNamed {
    std::string name;
    const Mat* tensor;
  };
  std::vector<Named> tensors();
  std::vector<ConstNamed> tensors() const;

  Weights zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Per-channel input standardization and label scaling, fitted on the
// training split.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  double label_mean = 0.0;
  double label_std = 1.0;
};

nlohmann::json to_json(const NormStats& n);
NormStats norm_stats_from_json(const nlohmann::json& j);

struct ModelParams {
  TinyViTConfig config;
  NormStats norm;
  Weights weights;
};

// Truncated-normal (sigma 0.02) weights, zero biases, unit LayerNorm gains,
// identity normalization.
ModelParams init_params(const TinyViTConfig& config, std::uint64_t seed);

// Token layout: token (tr, tc) of a (rows x cols) token grid is matrix row
// tr * cols + tc; within a token, feature c * p^2 + r * p + col.
struct TokenGrid {
  int rows = 0;
  int cols = 0;
  int count() const { return rows * cols; }
};

TokenGrid token_grid_for(const TinyViTConfig& c, int width, int height);

// Normalized input tokens for a stack holding the seven input roles;
// nodata inputs enter as 0 (the channel mean).
Mat input_tokens(const ModelParams& params, const BandStack& stack);
// Per-token pixel values of a single-band grid (rows: tokens, cols: p^2).
Mat grid_tokens(const Grid& g, int patch_size);

int pos_index(const TinyViTConfig& c, const TokenGrid& tg, int token);

struct MaeOutput {
  Mat reconstruction;  // tokens x token_dim
  double loss = 0.0;
};

// Mean squared error over the pixels of masked tokens only. `targets` share
// the token layout of `tokens`; rows of unmasked tokens are never read.
MaeOutput forward_mae(const ModelParams& params, const Mat& tokens, const Mat& targets,
                      std::span<const int> masked, const TokenGrid& tg);

// Normalized-space predictions, tokens x p^2.
Mat forward_regress_tokens(const ModelParams& params, const Mat& tokens, const TokenGrid& tg);

// Celsius LST prediction with the spatial shape of the input stack.
// Pixels where any input is nodata come back as nodata.
Grid forward_regress(const ModelParams& params, const BandStack& stack);

// Stacks no larger than image_size go through forward_regress directly;
// larger ones are tiled by image_size and stitched, leaving pixels outside
// full tiles as nodata.
Grid predict_stack(const ModelParams& params, const BandStack& stack);

std::vector<int> random_mask(int num_tokens, double mask_ratio, Rng& rng);

enum class Objective { mae, regress };

// One training example in token space.
struct TokenExample {
  Mat tokens;          // tokens x token_dim (normalized inputs)
  TokenGrid grid;
  // mae objective
  Mat targets;         // tokens x token_dim
  std::vector<int> masked;
  // regress objective
  Mat label;           // tokens x p^2 (normalized label)
  Mat label_valid;     // tokens x p^2, 1 where the label pixel counts
};

struct GradResult {
  Weights grads;
  double loss = 0.0;
};

// Reverse-mode gradient of the batch loss times `loss_scale`. The batch loss
// is the mean over samples of each sample's loss. Throws NonFiniteLoss.
GradResult backward(const ModelParams& params, std::span<const TokenExample> batch, Objective objective,
                    double loss_scale = 1.0, int workers = 1);

// Loss alone (same definition as backward), for finite-difference checks.
double batch_loss(const ModelParams& params, std::span<const TokenExample> batch, Objective objective);

}  // namespace uhi
