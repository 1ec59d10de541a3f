#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvr/loss.hpp"
#include "mvr/net.hpp"
#include "mvr/scene.hpp"

namespace mvr {

inline constexpr int kDatasetFormatVersion = 1;

enum class Split : std::uint8_t { train, val, test };
std::string_view to_string(Split s);
Split split_from_string(std::string_view name);

struct SplitRange {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::uint64_t seed = 0;
  SceneSpec scene;
  int locations = 0;
  int views_per_location = 4;
  int augmentations = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> channels;
  SplitRange train, val, test;

  SplitRange range(Split s) const;
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Contiguous 80/10/10 ranges over location indices.
void assign_splits(DatasetManifest& m);

nlohmann::json scene_to_json(const SceneSpec& s);
SceneSpec scene_from_json(const nlohmann::json& j);

/// One stored viewpoint.
struct StoredView {
  RenderedView lq;
  ImageF hq_idepth;
  float mu = 0.0f;
  float sigma = 1.0f;
  int variant = 0;  // 0 = canonical pose, k = k-th augmentation
};

std::filesystem::path location_dir(const std::filesystem::path& root, int location);
std::filesystem::path view_dir(const std::filesystem::path& root, int location, ViewTag tag, int variant);

void write_view(const std::filesystem::path& dir, const StoredView& view);
StoredView read_view(const std::filesystem::path& dir);

struct GenerateOptions {
  std::uint64_t seed = 0;
  int locations = 8;
  int augmentations = kAugmentationsPerView;
  int downsample = 1;  // render at default resolution divided by this
  SceneSpec scene{0, 80.0, 24, 8, {0.03, 0.02, 0.15, 8.0}};
};

/// Renders every location and writes manifest plus view directories under `root`.
DatasetManifest generate_dataset(const GenerateOptions& options, const std::filesystem::path& root);

/// A training or evaluation example: one location's views with supervision planes.
struct Sample {
  ViewBundle bundle;
  std::vector<ImageF> hq_idepth;
};

class Dataset {
 public:
  /// Reads and checks the manifest; throws FormatError on a version mismatch.
  static Dataset open(const std::filesystem::path& root);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  Sample load(int location, int variant = 0) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

/// Supervision labels for a batch of samples, stacked like Model::refine.
Labels batch_labels(const std::vector<Sample>& samples);
std::vector<ViewBundle> batch_bundles(const std::vector<Sample>& samples);

}  // namespace mvr
