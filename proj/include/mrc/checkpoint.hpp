#pragma once

#include <filesystem>
#include <optional>

#include "mrc/trainer.hpp"

namespace mrc {

// Checkpoint file: magic + format version, a JSON header (configs, step,
// best dev accuracy, sampler RNG state), then named raw little-endian float32
// tensor blobs for parameters and optimizer moments. Writes are atomic
// (temp file, then rename) and round-trips are byte-exact.

struct CheckpointMeta {
  int format_version = 1;
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
  double dev_accuracy = -1.0;
  std::size_t best_step = 0;
  std::uint64_t sampler_rng_state = 0;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const ModelParams<float>& params, const AdamwState* opt);

struct LoadedCheckpoint {
  CheckpointMeta meta;
  ModelParams<float> params;
  AdamwState opt;  // empty when the file carries no moments
  bool has_opt = false;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mrc
