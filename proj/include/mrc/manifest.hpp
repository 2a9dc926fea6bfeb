#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrc/model_config.hpp"
#include "mrc/trainer.hpp"

namespace mrc {

struct DatasetFingerprint {
  std::string task;
  std::string split;  // train | dev
  std::string path;   // "synthetic" for generated data
  std::size_t items = 0;
  std::string content_hash;  // fnv1a-64, hex
};

// Everything needed to reproduce a run: the fully resolved configs, what data
// went in, and where the artifacts land.
struct RunManifest {
  ModelConfig model;
  TrainConfig train;
  std::vector<DatasetFingerprint> datasets;
  std::string out_dir;
  std::string vocab_path;
  std::string metrics_path;
  std::string checkpoint_path;
};

std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                    std::uint64_t seed = 0xCBF29CE484222325ULL);
std::string hash_file(const std::filesystem::path& path);
// Directory hash: sorted relative paths and their file contents.
std::string hash_tree(const std::filesystem::path& path);
std::string hash_examples(std::span<const McExample> examples);

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace mrc
