#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "demure/train/config.hpp"
#include "demure/train/optimizer.hpp"

namespace demure::train {

struct TrainProgress {
  std::uint64_t epoch = 0;
  std::uint64_t step_in_epoch = 0;
  std::uint64_t global_step = 0;

  friend bool operator==(const TrainProgress&, const TrainProgress&) = default;
};

struct Checkpoint {
  TrainConfig config;
  model::EncoderParams params;
  OptimizerState optimizer;
  std::string rng_state;
  TrainProgress progress;
};

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::uint64_t config_hash = 0;
  bool config_mismatch = false;  // stored hash differs from the expected config's
  std::string warning;
};

/// Layout, little-endian: "DMCK", u32 version, u64 config hash, u32 length +
/// config JSON, u64 epoch, u64 step in epoch, u64 global step, u32 length +
/// rng state, u64 Adam step, u32 parameter count, then per parameter a u16
/// length + name, u32 rows, u32 cols and rows*cols f64 values for the
/// parameter, first moment and second moment. A CRC32 of everything before it
/// closes the file.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
LoadedCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes,
                                  const TrainConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const TrainConfig* expected = nullptr);

}  // namespace demure::train
