#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "entlab/model.hpp"

namespace entlab {

// Checkpoint/artifact problems that map to CLI exit code 4.
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

// Binary little-endian layout: magic "ENTLAB01", version u32, parameter count
// u64, then per parameter: name length u32, name bytes, rank u32, dims u64
// each, raw float32 payload.
void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

// Model checkpoints carry the ModelConfig JSON as a reserved first entry.
void save_model_checkpoint(const std::string& path, const Model<float>& model);
Model<float> load_model_checkpoint(const std::string& path);

inline constexpr char kCheckpointMagic[] = "ENTLAB01";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kConfigEntryName = "__model_config__";

}  // namespace entlab
