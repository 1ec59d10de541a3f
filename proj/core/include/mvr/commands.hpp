#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvr/dataset.hpp"
#include "mvr/metrics.hpp"
#include "mvr/net.hpp"
#include "mvr/train.hpp"

namespace mvr::cli {

/// Machine-parsable category printed as `error: <category>: <message>`.
std::string_view error_category(const std::exception& e);

/// Reads MVR_THREADS (positive integer) and applies it to the op thread pool. Returns the count in use.
int apply_thread_env();

/// Run configuration file: {"model": {...}, "train": {...}}; both keys optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

DatasetManifest cmd_generate(const GenerateOptions& options, const std::filesystem::path& out, std::ostream& log);

struct TrainArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::optional<std::int64_t> steps;  // overrides train.total_steps
  std::optional<std::uint64_t> seed;  // overrides train.seed
  bool verbose = false;
};
TrainResult cmd_train(const TrainArgs& args, std::ostream& log);

struct EvalArgs {
  std::filesystem::path data;
  std::filesystem::path ckpt;
  Split split = Split::test;
  std::optional<std::filesystem::path> out;  // metrics JSON
};
EvalReport cmd_eval(const EvalArgs& args, std::ostream& log);

/// Preview encoding: byte = round(255 * min(d / kPreviewMaxIdepth, 1)).
inline constexpr float kPreviewMaxIdepth = 0.5f;

struct InferArgs {
  std::filesystem::path ckpt;
  std::filesystem::path view;  // a view directory, or a location directory holding the canonical views
  std::filesystem::path out;
};
/// Writes per view `<tag>/idepth_refined.f32`, `preview_input.pgm`, `preview_refined.pgm`, `meta.json`.
void cmd_infer(const InferArgs& args, std::ostream& log);

struct AblationVariant {
  std::string name;
  Aggregation aggregation = Aggregation::none;
  bool feature_transform = false;
};
/// baseline, average, average+fsr, attention, attention+fsr.
std::vector<AblationVariant> ablation_variants();

struct AblateArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  std::optional<std::int64_t> steps;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> only;  // restrict to these variant names
};

struct AblationRow {
  std::string name;
  std::vector<MetricsReport> per_seed;  // test split, refined
  MetricsReport median;                 // column-wise median over seeds
};
struct AblationResult {
  MetricsReport input;
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string to_table() const;
};
AblationResult cmd_ablate(const AblateArgs& args, std::ostream& log);

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// Binary 8-bit grayscale PGM.
void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> preview_bytes(const std::vector<float>& idepth);

}  // namespace mvr::cli
