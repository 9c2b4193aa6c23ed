#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "uhi/vit.hpp"

namespace uhi {

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  int epoch = 0;
  nlohmann::json extra;  // free-form run metadata (split protocol, schedule, ...)
};

// `path` names the manifest (<base>.json); tensors go to <base>.bin as
// little-endian float32 in manifest order.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Rounds every weight to float32, i.e. what a checkpoint round trip yields.
void round_to_float32(Weights& w);

}  // namespace uhi
