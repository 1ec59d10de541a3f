#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvr/checkpoint.hpp"
#include "mvr/dataset.hpp"
#include "mvr/loss.hpp"
#include "mvr/metrics.hpp"
#include "mvr/net.hpp"

namespace mvr {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_start = 1e-4;
  double lr_end = 5e-6;
  std::int64_t lr_decay_steps = 120000;
  double clip_norm = 80.0;
  int batch_locations = 4;
  std::int64_t total_steps = 20000;
  std::uint64_t seed = 0;
  LossWeights weights;
  GcDrive gc_drive = GcDrive::predicted;
  int validate_every = 500;
  int checkpoint_every = 500;
  bool keep_checkpoints = false;  // also keep step_XXXXXXXX.mvrf snapshots
  bool use_augmentations = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Linear decay from lr_start to lr_end over lr_decay_steps, then constant.
double lr_at(const TrainConfig& cfg, std::int64_t step);

template <typename T>
using GradientList = std::vector<std::vector<T>>;

template <typename T>
double global_norm(const GradientList<T>& grads);

/// Rescales so the global L2 norm is at most max_norm. Returns the norm before clipping.
/// Throws NonFiniteError when any entry is NaN or infinite.
template <typename T>
double clip_gradients(GradientList<T>& grads, double max_norm);

template <typename T>
struct OptimizerState {
  GradientList<T> m;
  GradientList<T> v;
  std::int64_t step = 0;
};

template <typename T>
OptimizerState<T> fresh_optimizer_state(const ParameterSet<T>& params);

/// Bias-corrected Adam update of every parameter in `params`.
template <typename T>
void adam_step(ParameterSet<T>& params, const GradientList<T>& grads, OptimizerState<T>& state, double lr,
               const TrainConfig& cfg);

struct StepLog {
  std::int64_t step = 0;
  float loss = 0, l_data = 0, l_grad = 0, l_gc = 0, l_reg = 0;
  double lr = 0;
  double grad_norm = 0;

  /// `step loss l_data l_grad l_gc l_reg lr grad_norm`, round-trip precision.
  std::string format() const;
};

/// Locations and augmentation variants of the batch used at `step`. A pure function of (seed, step).
std::vector<std::pair<int, int>> sample_batch(const TrainConfig& cfg, const DatasetManifest& m, std::int64_t step);

/// Parameters, optimizer moments and step counter.
std::vector<CheckpointEntry> training_entries(const ModelParams& params, const OptimizerState<float>& state);
/// Restores what training_entries wrote; returns the stored step.
std::int64_t load_training_entries(const std::vector<CheckpointEntry>& entries, ModelParams& params,
                                   OptimizerState<float>& state);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::ostream* progress = nullptr;
  std::int64_t stop_after = -1;  // stop (with a checkpoint) at this step, for interrupted runs
};

struct TrainResult {
  std::vector<StepLog> log;
  std::int64_t final_step = 0;
  double best_val_imae = 0.0;
  ModelParams params;
};

/// One optimization step on the given batch. Returns the log entry.
StepLog train_step(const Model<float>& model, ModelParams& params, OptimizerState<float>& state,
                   const std::vector<Sample>& batch, const TrainConfig& cfg);

TrainResult train_loop(const Dataset& data, const ModelConfig& model_config, const TrainConfig& cfg,
                       const TrainOptions& options);

/// Metrics of the unrefined input and of the refined output over a split, globally pooled.
/// `dump`, when set, receives (d_star, d_hq, d_lq) per view.
using PlaneDump = std::function<void(const std::vector<float>&, const std::vector<float>&, const std::vector<float>&)>;
EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const Dataset& data, Split split,
                    const PlaneDump& dump = {});

}  // namespace mvr
