#include "uhi/checkpoint.hpp"

#include <bit>

#include "uhi/error.hpp"
#include "uhi/io_util.hpp"

namespace uhi {

namespace {

std::filesystem::path bin_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  return p.replace_extension(".bin");
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[k]) << (8 * k);
  return std::bit_cast<float>(u);
}

}  // namespace

void round_to_float32(Weights& w) {
  for (auto& t : w.tensors()) {
    for (Eigen::Index i = 0; i < t.tensor->size(); ++i) (*t.tensor)(i) = static_cast<float>((*t.tensor)(i));
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (!ckpt.params.weights.all_finite()) throw Error(ErrorCode::InvalidArgument, "refusing to save non-finite weights");
  std::vector<std::uint8_t> bin;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : ckpt.params.weights.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", {t.tensor->rows(), t.tensor->cols()}}, {"offset", bin.size()}});
    // Row-major on disk regardless of Eigen's storage order.
    for (Eigen::Index r = 0; r < t.tensor->rows(); ++r) {
      for (Eigen::Index c = 0; c < t.tensor->cols(); ++c) put_f32(bin, static_cast<float>((*t.tensor)(r, c)));
    }
  }
  const nlohmann::json manifest = {{"format", "uhi-checkpoint"},
                                   {"config", to_json(ckpt.params.config)},
                                   {"norm_stats", to_json(ckpt.params.norm)},
                                   {"seed", ckpt.seed},
                                   {"epoch", ckpt.epoch},
                                   {"dtype", "float32"},
                                   {"byte_order", "little"},
                                   {"binary", bin_path(path).filename().string()},
                                   {"tensors", tensors},
                                   {"extra", ckpt.extra}};
  write_atomic(bin_path(path), bin);
  write_atomic(path, manifest.dump(2) + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  if (m.value("format", "") != "uhi-checkpoint") throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a checkpoint manifest");
  Checkpoint ckpt;
  ckpt.params = init_params(vit_config_from_json(m.at("config")), 0);
  ckpt.params.norm = norm_stats_from_json(m.at("norm_stats"));
  ckpt.seed = m.value("seed", std::uint64_t{0});
  ckpt.epoch = m.value("epoch", 0);
  ckpt.extra = m.value("extra", nlohmann::json(nullptr));

  const std::vector<std::uint8_t> bin = read_file(bin_path(path));
  auto targets = ckpt.params.weights.tensors();
  const auto& entries = m.at("tensors");
  if (entries.size() != targets.size()) throw Error(ErrorCode::CorruptFile, "checkpoint tensor count mismatch");
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& e = entries[k];
    Mat& t = *targets[k].tensor;
    if (e.at("name").get<std::string>() != targets[k].name || e.at("shape")[0].get<Eigen::Index>() != t.rows() ||
        e.at("shape")[1].get<Eigen::Index>() != t.cols()) {
      throw Error(ErrorCode::CorruptFile, "checkpoint tensor '" + targets[k].name + "' does not match config");
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(t.size()) * 4 > bin.size()) {
      throw Error(ErrorCode::CorruptFile, "checkpoint binary truncated");
    }
    const std::uint8_t* p = bin.data() + offset;
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c, p += 4) t(r, c) = get_f32(p);
    }
  }
  if (!ckpt.params.weights.all_finite()) throw Error(ErrorCode::CorruptFile, "checkpoint holds non-finite weights");
  return ckpt;
}

}  // namespace uhi
