#include "uhi/vit.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "uhi/error.hpp"
#include "uhi/rng.hpp"

namespace uhi {

void TinyViTConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "model config: " + m); };
  if (patch_size < 1 || image_size < patch_size) fail("image_size must be at least patch_size");
  if (image_size % patch_size != 0) fail("token grid must divide the sample patch exactly");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (encoder_depth < 0 || decoder_depth < 0 || mlp_ratio < 1 || in_channels < 1) fail("bad depth/ratio/channels");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
}

int TinyViTConfig::masked_count(int tokens) const {
  return static_cast<int>(std::lround(mask_ratio * tokens));
}

nlohmann::json to_json(const TinyViTConfig& c) {
  return {{"image_size", c.image_size},       {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},         {"num_heads", c.num_heads},
          {"encoder_depth", c.encoder_depth}, {"decoder_depth", c.decoder_depth},
          {"mlp_ratio", c.mlp_ratio},         {"in_channels", c.in_channels},
          {"mask_ratio", c.mask_ratio},       {"activation", "gelu"}};
}

TinyViTConfig vit_config_from_json(const nlohmann::json& j) {
  TinyViTConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
  c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.validate();
  return c;
}

nlohmann::json to_json(const NormStats& n) {
  return {{"mean", n.mean}, {"stddev", n.stddev}, {"label_mean", n.label_mean}, {"label_std", n.label_std}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats n;
  n.mean = j.value("mean", std::vector<double>{});
  n.stddev = j.value("stddev", std::vector<double>{});
  n.label_mean = j.value("label_mean", 0.0);
  n.label_std = j.value("label_std", 1.0);
  return n;
}

namespace {

void add_block(std::vector<Weights::Named>& out, const std::string& prefix, BlockParams& b) {
  out.push_back({prefix + ".ln1.g", &b.ln1.g});
  out.push_back({prefix + ".ln1.b", &b.ln1.b});
  out.push_back({prefix + ".attn.qkv.w", &b.qkv.w});
  out.push_back({prefix + ".attn.qkv.b", &b.qkv.b});
  out.push_back({prefix + ".attn.proj.w", &b.proj.w});
  out.push_back({prefix + ".attn.proj.b", &b.proj.b});
  out.push_back({prefix + ".ln2.g", &b.ln2.g});
  out.push_back({prefix + ".ln2.b", &b.ln2.b});
  out.push_back({prefix + ".mlp.fc1.w", &b.fc1.w});
  out.push_back({prefix + ".mlp.fc1.b", &b.fc1.b});
  out.push_back({prefix + ".mlp.fc2.w", &b.fc2.w});
  out.push_back({prefix + ".mlp.fc2.b", &b.fc2.b});
}

}  // namespace

std::vector<Weights::Named> Weights::tensors() {
  std::vector<Named> out;
  out.push_back({"patch_embed.w", &patch_embed.w});
  out.push_back({"patch_embed.b", &patch_embed.b});
  out.push_back({"pos_embed", &pos_embed});
  for (std::size_t i = 0; i < encoder.size(); ++i) add_block(out, "encoder." + std::to_string(i), encoder[i]);
  out.push_back({"enc_norm.g", &enc_norm.g});
  out.push_back({"enc_norm.b", &enc_norm.b});
  out.push_back({"dec_embed.w", &dec_embed.w});
  out.push_back({"dec_embed.b", &dec_embed.b});
  out.push_back({"mask_token", &mask_token});
  out.push_back({"dec_pos_embed", &dec_pos_embed});
  for (std::size_t i = 0; i < decoder.size(); ++i) add_block(out, "decoder." + std::to_string(i), decoder[i]);
  out.push_back({"dec_norm.g", &dec_norm.g});
  out.push_back({"dec_norm.b", &dec_norm.b});
  out.push_back({"dec_pred.w", &dec_pred.w});
  out.push_back({"dec_pred.b", &dec_pred.b});
  out.push_back({"head.w", &head.w});
  out.push_back({"head.b", &head.b});
  return out;
}

std::vector<Weights::ConstNamed> Weights::tensors() const {
  std::vector<ConstNamed> out;
  for (const auto& n : const_cast<Weights*>(this)->tensors()) out.push_back({n.name, n.tensor});
  return out;
}

Weights Weights::zeros_like() const {
  Weights z = *this;
  for (auto& n : z.tensors()) n.tensor->setZero();
  return z;
}

std::size_t Weights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
  return n;
}

bool Weights::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.tensor->allFinite()) return false;
  }
  return true;
}

ModelParams init_params(const TinyViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int d = config.embed_dim, h = config.hidden_dim(), g2 = config.num_tokens();
  auto normal = [&](int r, int c) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = rng.truncated_normal(0.02);
    }
    return m;
  };
  auto linear = [&](int in, int out) { return Linear{normal(in, out), Mat::Zero(1, out)}; };
  auto ln = [&](int dim) { return LayerNormParams{Mat::Ones(1, dim), Mat::Zero(1, dim)}; };
  auto block = [&]() {
    BlockParams b;
    b.ln1 = ln(d);
    b.qkv = linear(d, 3 * d);
    b.proj = linear(d, d);
    b.ln2 = ln(d);
    b.fc1 = linear(d, h);
    b.fc2 = linear(h, d);
    return b;
  };

  ModelParams p;
  p.config = config;
  p.norm.mean.assign(config.in_channels, 0.0);
  p.norm.stddev.assign(config.in_channels, 1.0);
  Weights& w = p.weights;
  w.patch_embed = linear(config.token_dim(), d);
  w.pos_embed = normal(g2, d);
  for (int i = 0; i < config.encoder_depth; ++i) w.encoder.push_back(block());
  w.enc_norm = ln(d);
  w.dec_embed = linear(d, d);
  w.mask_token = normal(1, d);
  w.dec_pos_embed = normal(g2, d);
  for (int i = 0; i < config.decoder_depth; ++i) w.decoder.push_back(block());
  w.dec_norm = ln(d);
  w.dec_pred = linear(d, config.token_dim());
  w.head = linear(d, config.pixels_per_token());
  return p;
}

TokenGrid token_grid_for(const TinyViTConfig& c, int width, int height) {
  if (width <= 0 || height <= 0 || width % c.patch_size != 0 || height % c.patch_size != 0 ||
      width / c.patch_size > c.grid_side() || height / c.patch_size > c.grid_side()) {
    throw Error(ErrorCode::ShapeMismatch, "input " + std::to_string(width) + "x" + std::to_string(height) +
                                              " does not fit the " + std::to_string(c.image_size) +
                                              " px model with " + std::to_string(c.patch_size) + " px tokens");
  }
  return {height / c.patch_size, width / c.patch_size};
}

int pos_index(const TinyViTConfig& c, const TokenGrid& tg, int token) {
  return (token / tg.cols) * c.grid_side() + token % tg.cols;
}

Mat grid_tokens(const Grid& g, int p) {
  const int cols = g.width() / p, rows = g.height() / p;
  Mat out(rows * cols, p * p);
  for (int r = 0; r < rows * p; ++r) {
    for (int c = 0; c < cols * p; ++c) {
      out((r / p) * cols + c / p, (r % p) * p + c % p) = g.is_nodata(r, c) ? 0.0 : g.at(r, c);
    }
  }
  return out;
}

Mat input_tokens(const ModelParams& params, const BandStack& stack) {
  const TinyViTConfig& cfg = params.config;
  if (cfg.in_channels != static_cast<int>(std::size(kInputRoles))) {
    throw Error(ErrorCode::ShapeMismatch, "model expects " + std::to_string(cfg.in_channels) +
                                              " channels, stacks provide 7");
  }
  const TokenGrid tg = token_grid_for(cfg, stack.width(), stack.height());
  const int p = cfg.patch_size, pp = p * p;
  Mat out(tg.count(), cfg.token_dim());
  for (int ch = 0; ch < cfg.in_channels; ++ch) {
    const Grid& g = stack.get(kInputRoles[ch]);
    const double mean = params.norm.mean.empty() ? 0.0 : params.norm.mean[ch];
    const double sd = params.norm.stddev.empty() ? 1.0 : params.norm.stddev[ch];
    for (int r = 0; r < tg.rows * p; ++r) {
      for (int c = 0; c < tg.cols * p; ++c) {
        const double v = g.is_nodata(r, c) ? 0.0 : (g.at(r, c) - mean) / sd;
        out((r / p) * tg.cols + c / p, ch * pp + (r % p) * p + c % p) = v;
      }
    }
  }
  return out;
}

namespace {

constexpr double kLnEps = 1e-6;

struct LnCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat ln_forward(const Mat& x, const LayerNormParams& p, LnCache& cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const Eigen::RowVectorXd centered = x.row(i).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd(i) = r;
    cache.xhat.row(i) = centered * r;
  }
  Mat y = (cache.xhat.array().rowwise() * p.g.row(0).array()).matrix();
  y.rowwise() += p.b.row(0);
  return y;
}

Mat ln_backward(const Mat& dy, const LayerNormParams& p, const LnCache& cache, LayerNormParams& grad) {
  grad.g += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.b += dy.colwise().sum();
  const Mat dxhat = (dy.array().rowwise() * p.g.row(0).array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

Mat linear_forward(const Mat& x, const Linear& l) {
  Mat y(x.rows(), l.w.cols());
  y.noalias() = x * l.w;
  y.rowwise() += l.b.row(0);
  return y;
}

Mat linear_backward(const Mat& dy, const Mat& x, const Linear& l, Linear& grad) {
  grad.w.noalias() += x.transpose() * dy;
  grad.b += dy.colwise().sum();
  Mat dx(dy.rows(), l.w.rows());
  dx.noalias() = dy * l.w.transpose();
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct BlockCache {
  LnCache ln1;
  Mat h1;
  Mat qkv;
  std::vector<Mat> probs;
  Mat attn;
  LnCache ln2;
  Mat h2;
  Mat pre;  // fc1 output
  Mat act;  // gelu(pre)
};

Mat block_forward(const Mat& x, const BlockParams& p, int heads, BlockCache& c) {
  const Eigen::Index t = x.rows(), d = x.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.h1 = ln_forward(x, p.ln1, c.ln1);
  c.qkv = linear_forward(c.h1, p.qkv);
  c.attn.resize(t, d);
  c.probs.resize(heads);
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(d + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    Mat s(t, t);
    s.noalias() = q * k.transpose();
    s *= scale;
    for (Eigen::Index i = 0; i < t; ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp().matrix();
      s.row(i) /= s.row(i).sum();
    }
    c.attn.middleCols(h * dh, dh).noalias() = s * v;
    c.probs[h] = std::move(s);
  }
  Mat x1 = x + linear_forward(c.attn, p.proj);
  c.h2 = ln_forward(x1, p.ln2, c.ln2);
  c.pre = linear_forward(c.h2, p.fc1);
  c.act = c.pre.unaryExpr([](double v) { return gelu(v); });
  return x1 + linear_forward(c.act, p.fc2);
}

Mat block_backward(const Mat& dout, const BlockParams& p, int heads, const BlockCache& c, BlockParams& g) {
  const Eigen::Index t = dout.rows(), d = dout.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dx1 = dout;
  const Mat dact = linear_backward(dout, c.act, p.fc2, g.fc2);
  const Mat dpre = (dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix();
  const Mat dh2 = linear_backward(dpre, c.h2, p.fc1, g.fc1);
  dx1 += ln_backward(dh2, p.ln2, c.ln2, g.ln2);

  const Mat dattn = linear_backward(dx1, c.attn, p.proj, g.proj);
  Mat dqkv = Mat::Zero(t, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(d + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    const Mat& prob = c.probs[h];
    const auto dout_h = dattn.middleCols(h * dh, dh);
    dqkv.middleCols(2 * d + h * dh, dh).noalias() = prob.transpose() * dout_h;
    Mat dprob(t, t);
    dprob.noalias() = dout_h * v.transpose();
    const Eigen::VectorXd row_dot = (dprob.array() * prob.array()).rowwise().sum();
    const Mat ds = (prob.array() * (dprob.colwise() - row_dot).array()).matrix();
    dqkv.middleCols(h * dh, dh).noalias() = scale * (ds * k);
    dqkv.middleCols(d + h * dh, dh).noalias() = scale * (ds.transpose() * q);
  }
  const Mat dh1 = linear_backward(dqkv, c.h1, p.qkv, g.qkv);
  return dx1 + ln_backward(dh1, p.ln1, c.ln1, g.ln1);
}

struct RegressCache {
  std::vector<Mat> block_in;
  std::vector<BlockCache> blocks;
  LnCache norm;
  Mat normed;
  Mat out;
};

void regress_forward(const ModelParams& params, const Mat& tokens, const TokenGrid& tg, RegressCache& c) {
  const Weights& w = params.weights;
  const TinyViTConfig& cfg = params.config;
  if (tokens.rows() != tg.count() || tokens.cols() != cfg.token_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "token matrix shape does not match config");
  }
  Mat z = linear_forward(tokens, w.patch_embed);
  for (int t = 0; t < tg.count(); ++t) z.row(t) += w.pos_embed.row(pos_index(cfg, tg, t));
  c.blocks.resize(w.encoder.size());
  c.block_in.resize(w.encoder.size());
  for (std::size_t i = 0; i < w.encoder.size(); ++i) {
    c.block_in[i] = z;
    z = block_forward(z, w.encoder[i], cfg.num_heads, c.blocks[i]);
  }
  c.normed = ln_forward(z, w.enc_norm, c.norm);
  c.out = linear_forward(c.normed, w.head);
}

void regress_backward(const ModelParams& params, const Mat& tokens, const TokenGrid& tg, const RegressCache& c,
                      const Mat& dout, Weights& g) {
  const Weights& w = params.weights;
  const TinyViTConfig& cfg = params.config;
  const Mat dn = linear_backward(dout, c.normed, w.head, g.head);
  Mat dz = ln_backward(dn, w.enc_norm, c.norm, g.enc_norm);
  for (std::size_t i = w.encoder.size(); i-- > 0;) {
    dz = block_backward(dz, w.encoder[i], cfg.num_heads, c.blocks[i], g.encoder[i]);
  }
  for (int t = 0; t < tg.count(); ++t) g.pos_embed.row(pos_index(cfg, tg, t)) += dz.row(t);
  linear_backward(dz, tokens, w.patch_embed, g.patch_embed);
}

struct MaeCache {
  std::vector<int> visible;
  Mat vis_tokens;
  std::vector<BlockCache> enc_blocks;
  LnCache enc_norm;
  Mat enc_out;
  std::vector<BlockCache> dec_blocks;
  LnCache dec_norm;
  Mat dec_normed;
  Mat pred;
};

void mae_forward(const ModelParams& params, const Mat& tokens, std::span<const int> masked, const TokenGrid& tg,
                 MaeCache& c) {
  const Weights& w = params.weights;
  const TinyViTConfig& cfg = params.config;
  const int n = tg.count();
  if (tokens.rows() != n || tokens.cols() != cfg.token_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "token matrix shape does not match config");
  }
  std::vector<char> is_masked(n, 0);
  for (int m : masked) {
    if (m < 0 || m >= n || is_masked[m]) throw Error(ErrorCode::ShapeMismatch, "invalid mask index set");
    is_masked[m] = 1;
  }
  if (masked.empty() || static_cast<int>(masked.size()) >= n) {
    throw Error(ErrorCode::ShapeMismatch, "mask must hide at least one and keep at least one token");
  }
  c.visible.clear();
  for (int t = 0; t < n; ++t) {
    if (!is_masked[t]) c.visible.push_back(t);
  }
  const int nv = static_cast<int>(c.visible.size());
  c.vis_tokens.resize(nv, tokens.cols());
  for (int i = 0; i < nv; ++i) c.vis_tokens.row(i) = tokens.row(c.visible[i]);

  Mat z = linear_forward(c.vis_tokens, w.patch_embed);
  for (int i = 0; i < nv; ++i) z.row(i) += w.pos_embed.row(pos_index(cfg, tg, c.visible[i]));
  c.enc_blocks.resize(w.encoder.size());
  for (std::size_t i = 0; i < w.encoder.size(); ++i) z = block_forward(z, w.encoder[i], cfg.num_heads, c.enc_blocks[i]);
  c.enc_out = ln_forward(z, w.enc_norm, c.enc_norm);
  const Mat dv = linear_forward(c.enc_out, w.dec_embed);

  Mat full(n, cfg.embed_dim);
  for (int t = 0; t < n; ++t) {
    if (is_masked[t]) full.row(t) = w.mask_token.row(0);
  }
  for (int i = 0; i < nv; ++i) full.row(c.visible[i]) = dv.row(i);
  for (int t = 0; t < n; ++t) full.row(t) += w.dec_pos_embed.row(pos_index(cfg, tg, t));
  c.dec_blocks.resize(w.decoder.size());
  for (std::size_t i = 0; i < w.decoder.size(); ++i) {
    full = block_forward(full, w.decoder[i], cfg.num_heads, c.dec_blocks[i]);
  }
  c.dec_normed = ln_forward(full, w.dec_norm, c.dec_norm);
  c.pred = linear_forward(c.dec_normed, w.dec_pred);
}

double mae_loss(const Mat& pred, const Mat& targets, std::span<const int> masked) {
  double sum = 0.0;
  for (int t : masked) sum += (pred.row(t) - targets.row(t)).squaredNorm();
  return sum / (static_cast<double>(masked.size()) * static_cast<double>(pred.cols()));
}

void mae_backward(const ModelParams& params, const TokenGrid& tg, std::span<const int> masked, const MaeCache& c,
                  const Mat& dpred, Weights& g) {
  const Weights& w = params.weights;
  const TinyViTConfig& cfg = params.config;
  const Mat dnormed = linear_backward(dpred, c.dec_normed, w.dec_pred, g.dec_pred);
  Mat dfull = ln_backward(dnormed, w.dec_norm, c.dec_norm, g.dec_norm);
  for (std::size_t i = w.decoder.size(); i-- > 0;) {
    dfull = block_backward(dfull, w.decoder[i], cfg.num_heads, c.dec_blocks[i], g.decoder[i]);
  }
  for (int t = 0; t < tg.count(); ++t) g.dec_pos_embed.row(pos_index(cfg, tg, t)) += dfull.row(t);
  for (int t : masked) g.mask_token.row(0) += dfull.row(t);
  const int nv = static_cast<int>(c.visible.size());
  Mat ddv(nv, cfg.embed_dim);
  for (int i = 0; i < nv; ++i) ddv.row(i) = dfull.row(c.visible[i]);
  const Mat denc = linear_backward(ddv, c.enc_out, w.dec_embed, g.dec_embed);
  Mat dz = ln_backward(denc, w.enc_norm, c.enc_norm, g.enc_norm);
  for (std::size_t i = w.encoder.size(); i-- > 0;) {
    dz = block_backward(dz, w.encoder[i], cfg.num_heads, c.enc_blocks[i], g.encoder[i]);
  }
  for (int i = 0; i < nv; ++i) g.pos_embed.row(pos_index(cfg, tg, c.visible[i])) += dz.row(i);
  linear_backward(dz, c.vis_tokens, w.patch_embed, g.patch_embed);
}

double regress_loss(const Mat& out, const Mat& label, const Mat& valid, double* count) {
  const double n = valid.sum();
  if (count) *count = n;
  if (n == 0.0) return 0.0;
  return ((out - label).array().square() * valid.array()).sum() / n;
}

// Loss of one example and, when `grads` is non-null, its gradient scaled by
// `scale` (accumulated into *grads).
double example_pass(const ModelParams& params, const TokenExample& ex, Objective obj, double scale,
                    Weights* grads) {
  if (obj == Objective::mae) {
    MaeCache c;
    mae_forward(params, ex.tokens, ex.masked, ex.grid, c);
    if (ex.targets.rows() != c.pred.rows() || ex.targets.cols() != c.pred.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "MAE targets do not match token layout");
    }
    const double loss = mae_loss(c.pred, ex.targets, ex.masked);
    if (grads) {
      Mat dpred = Mat::Zero(c.pred.rows(), c.pred.cols());
      const double k = 2.0 * scale / (static_cast<double>(ex.masked.size()) * static_cast<double>(c.pred.cols()));
      for (int t : ex.masked) dpred.row(t) = k * (c.pred.row(t) - ex.targets.row(t));
      mae_backward(params, ex.grid, ex.masked, c, dpred, *grads);
    }
    return loss;
  }
  RegressCache c;
  regress_forward(params, ex.tokens, ex.grid, c);
  if (ex.label.rows() != c.out.rows() || ex.label.cols() != c.out.cols() ||
      ex.label_valid.rows() != c.out.rows() || ex.label_valid.cols() != c.out.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "regression label does not match token layout");
  }
  double n = 0.0;
  const double loss = regress_loss(c.out, ex.label, ex.label_valid, &n);
  if (grads && n > 0.0) {
    const Mat dout = ((2.0 * scale / n) * (c.out - ex.label).array() * ex.label_valid.array()).matrix();
    regress_backward(params, ex.tokens, ex.grid, c, dout, *grads);
  }
  return loss;
}

}  // namespace

MaeOutput forward_mae(const ModelParams& params, const Mat& tokens, const Mat& targets, std::span<const int> masked,
                      const TokenGrid& tg) {
  MaeCache c;
  mae_forward(params, tokens, masked, tg, c);
  if (targets.rows() != c.pred.rows() || targets.cols() != c.pred.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "MAE targets do not match token layout");
  }
  MaeOutput out;
  out.loss = mae_loss(c.pred, targets, masked);
  out.reconstruction = std::move(c.pred);
  return out;
}

Mat forward_regress_tokens(const ModelParams& params, const Mat& tokens, const TokenGrid& tg) {
  RegressCache c;
  regress_forward(params, tokens, tg, c);
  return std::move(c.out);
}

Grid forward_regress(const ModelParams& params, const BandStack& stack) {
  const TinyViTConfig& cfg = params.config;
  const TokenGrid tg = token_grid_for(cfg, stack.width(), stack.height());
  const Mat out = forward_regress_tokens(params, input_tokens(params, stack), tg);
  const int p = cfg.patch_size;
  Grid pred(stack.width(), stack.height(), stack.georef(), Units::celsius);
  for (int r = 0; r < stack.height(); ++r) {
    for (int c = 0; c < stack.width(); ++c) {
      bool nodata = false;
      for (Role role : kInputRoles) nodata = nodata || stack.get(role).is_nodata(r, c);
      if (nodata) {
        pred.set_nodata(r, c);
        continue;
      }
      const double v = out((r / p) * tg.cols + c / p, (r % p) * p + c % p);
      pred.set(r, c, v * params.norm.label_std + params.norm.label_mean);
    }
  }
  return pred;
}

Grid predict_stack(const ModelParams& params, const BandStack& stack) {
  const int size = params.config.image_size;
  if (stack.width() <= size && stack.height() <= size) return forward_regress(params, stack);
  std::vector<Patch> outputs;
  for (const Patch& p : tile(stack, size, size)) {
    std::vector<std::pair<Role, Grid>> one;
    one.emplace_back(Role::lst, forward_regress(params, p.stack));
    outputs.push_back(Patch{align_stack(std::move(one)), p.origin_row, p.origin_col, size});
  }
  return stitch(outputs, stack.width(), stack.height(), Role::lst);
}

std::vector<int> random_mask(int num_tokens, double mask_ratio, Rng& rng) {
  std::vector<int> order(num_tokens);
  for (int i = 0; i < num_tokens; ++i) order[i] = i;
  rng.shuffle(order);
  const int k = static_cast<int>(std::lround(mask_ratio * num_tokens));
  std::vector<int> masked(order.begin(), order.begin() + k);
  std::sort(masked.begin(), masked.end());
  return masked;
}

double batch_loss(const ModelParams& params, std::span<const TokenExample> batch, Objective objective) {
  if (batch.empty()) throw Error(ErrorCode::EmptySplit, "empty batch");
  double sum = 0.0;
  for (const auto& ex : batch) sum += example_pass(params, ex, objective, 0.0, nullptr);
  return sum / static_cast<double>(batch.size());
}

GradResult backward(const ModelParams& params, std::span<const TokenExample> batch, Objective objective,
                    double loss_scale, int workers) {
  if (batch.empty()) throw Error(ErrorCode::EmptySplit, "empty batch");
  const std::size_t n = batch.size();
  const double scale = loss_scale / static_cast<double>(n);
  std::vector<Weights> per(n);
  std::vector<double> losses(n, 0.0);
  auto run = [&](std::size_t i) {
    per[i] = params.weights.zeros_like();
    losses[i] = example_pass(params, batch[i], objective, scale, &per[i]);
  };
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int wi = 0; wi < workers; ++wi) {
      pool.emplace_back([&, wi] {
        try {
          for (std::size_t i = wi; i < n; i += workers) run(i);
        } catch (...) {
          errors[wi] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  // Reduce in sample order so the result does not depend on `workers`.
  GradResult result;
  result.grads = std::move(per[0]);
  double loss = losses[0];
  auto dst = result.grads.tensors();
  for (std::size_t i = 1; i < n; ++i) {
    loss += losses[i];
    auto src = per[i].tensors();
    for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].tensor += *src[k].tensor;
  }
  result.loss = loss / static_cast<double>(n);
  if (!std::isfinite(result.loss)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  return result;
}

}  // namespace uhi
