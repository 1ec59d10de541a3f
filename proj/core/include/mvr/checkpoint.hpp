#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvr/net.hpp"

namespace mvr {

// Layout, all little-endian:
//   "MVRF0001"
//   u32 entry count
//   per entry: u32 name length, name bytes, u32 rank, u32 extents[rank], u64 absolute data offset
//   raw f32 values of every entry, in entry order
inline constexpr std::string_view kCheckpointMagic = "MVRF0001";

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

std::vector<CheckpointEntry> parameter_entries(const ModelParams& params, std::string_view prefix = "");
/// Copies values into `params` by name; every parameter must be present with its shape.
void load_parameter_entries(const std::vector<CheckpointEntry>& entries, ModelParams& params,
                            std::string_view prefix = "");
const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, std::string_view name);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// Model config sidecar written next to every checkpoint.
std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);

/// Parameters plus config sidecar.
void save_model(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);
struct LoadedModel {
  ModelConfig config;
  ModelParams params;
};
LoadedModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mvr
