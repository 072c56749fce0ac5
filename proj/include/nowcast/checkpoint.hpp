#pragma once

#include "nowcast/model.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace nowcast {

/// Writes bytes to a temporary sibling then renames over the target, so an
/// interrupted writer never clobbers an existing file.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);

/// Self-describing "NWCK1" container: config echo plus named float32
/// little-endian parameter and normalization-statistic blobs.
void save_checkpoint(const std::filesystem::path& path, NowcastModel<float>& model, std::uint64_t seed,
                     const std::string& extra_json = "");

struct LoadedCheckpoint {
  ModelConfig config;
  std::unique_ptr<NowcastModel<float>> model;
  std::uint64_t seed = 0;
  std::string extra_json;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nowcast
