#include "entlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace entlab {

namespace {

template <typename U>
void write_le(std::ofstream& f, U v) {
  // little-endian host assumed; raw write keeps the format bit-exact
  f.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_le(std::ifstream& f) {
  U v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!f) throw ArtifactError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kCheckpointMagic, 8);
  write_le<std::uint32_t>(f, kCheckpointVersion);
  write_le<std::uint64_t>(f, entries.size());
  for (const auto& e : entries) {
    write_le<std::uint32_t>(f, static_cast<std::uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_le<std::uint32_t>(f, static_cast<std::uint32_t>(e.shape.size()));
    std::size_t numel = 1;
    for (auto d : e.shape) {
      write_le<std::uint64_t>(f, d);
      numel *= d;
    }
    if (numel != e.data.size())
      throw std::invalid_argument("checkpoint: entry shape/data mismatch for " + e.name);
    f.write(reinterpret_cast<const char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ArtifactError("checkpoint: bad magic in " + path);
  const auto version = read_le<std::uint32_t>(f);
  if (version != kCheckpointVersion)
    throw ArtifactError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = read_le<std::uint64_t>(f);
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = read_le<std::uint32_t>(f);
    e.name.resize(name_len);
    f.read(e.name.data(), name_len);
    const auto rank = read_le<std::uint32_t>(f);
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::size_t>(read_le<std::uint64_t>(f)));
      numel *= e.shape.back();
    }
    e.data.resize(numel);
    f.read(reinterpret_cast<char*>(e.data.data()),
           static_cast<std::streamsize>(numel * sizeof(float)));
    if (!f) throw ArtifactError("checkpoint: truncated file " + path);
    out.push_back(std::move(e));
  }
  return out;
}

void save_model_checkpoint(const std::string& path, const Model<float>& model) {
  std::vector<CheckpointEntry> entries;
  const std::string cfg = model.config().to_json();
  CheckpointEntry ce;
  ce.name = kConfigEntryName;
  ce.shape = {cfg.size()};
  ce.data.reserve(cfg.size());
  for (char c : cfg) ce.data.push_back(static_cast<float>(static_cast<unsigned char>(c)));
  entries.push_back(std::move(ce));
  for (const auto& p : model.parameters()) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.shape;
    e.data.assign(p.value.begin(), p.value.end());
    entries.push_back(std::move(e));
  }
  save_checkpoint(path, entries);
}

Model<float> load_model_checkpoint(const std::string& path) {
  const auto entries = load_checkpoint(path);
  if (entries.empty() || entries[0].name != kConfigEntryName)
    throw ArtifactError("checkpoint: missing model config entry in " + path);
  std::string cfg_text;
  cfg_text.reserve(entries[0].data.size());
  for (float v : entries[0].data) cfg_text.push_back(static_cast<char>(v));
  Model<float> model(ModelConfig::from_json(cfg_text));
  auto& params = model.parameters();
  if (entries.size() - 1 != params.size())
    throw ArtifactError("checkpoint: parameter count mismatch in " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i + 1];
    if (e.name != params[i].name || e.data.size() != params[i].value.size())
      throw ArtifactError("checkpoint: parameter layout mismatch at " + e.name);
    std::copy(e.data.begin(), e.data.end(), params[i].value.begin());
  }
  return model;
}

}  // namespace entlab
