#include "mvr/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mvr/errors.hpp"
#include "mvr/rng.hpp"

namespace mvr {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_start >= lr_end && lr_end > 0)) throw std::invalid_argument("TrainConfig: need lr_start >= lr_end > 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
  if (lr_decay_steps < 1) throw std::invalid_argument("TrainConfig: lr_decay_steps must be positive");
  if (batch_locations < 1) throw std::invalid_argument("TrainConfig: batch_locations must be positive");
  if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be non-negative");
  if (validate_every < 1 || checkpoint_every < 1) throw std::invalid_argument("TrainConfig: intervals must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) {
    throw std::invalid_argument("TrainConfig: bad Adam constants");
  }
  weights.validate();
}

json TrainConfig::to_json() const {
  return {{"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"lr_start", lr_start},
          {"lr_end", lr_end},
          {"lr_decay_steps", lr_decay_steps},
          {"clip_norm", clip_norm},
          {"batch_locations", batch_locations},
          {"total_steps", total_steps},
          {"seed", seed},
          {"lambda_data", weights.data},
          {"lambda_grad", weights.grad},
          {"lambda_gc", weights.gc},
          {"lambda_reg", weights.reg},
          {"gc_drive", gc_drive == GcDrive::predicted ? "predicted" : "input"},
          {"validate_every", validate_every},
          {"checkpoint_every", checkpoint_every},
          {"keep_checkpoints", keep_checkpoints},
          {"use_augmentations", use_augmentations}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.lr_decay_steps = j.value("lr_decay_steps", c.lr_decay_steps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.batch_locations = j.value("batch_locations", c.batch_locations);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.seed = j.value("seed", c.seed);
    c.weights.data = j.value("lambda_data", c.weights.data);
    c.weights.grad = j.value("lambda_grad", c.weights.grad);
    c.weights.gc = j.value("lambda_gc", c.weights.gc);
    c.weights.reg = j.value("lambda_reg", c.weights.reg);
    const std::string drive = j.value("gc_drive", std::string("predicted"));
    if (drive != "predicted" && drive != "input") throw std::invalid_argument("gc_drive must be predicted or input");
    c.gc_drive = drive == "predicted" ? GcDrive::predicted : GcDrive::input;
    c.validate_every = j.value("validate_every", c.validate_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.keep_checkpoints = j.value("keep_checkpoints", c.keep_checkpoints);
    c.use_augmentations = j.value("use_augmentations", c.use_augmentations);
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(const TrainConfig& cfg, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (step >= cfg.lr_decay_steps) return cfg.lr_end;
  const double f = static_cast<double>(step) / static_cast<double>(cfg.lr_decay_steps);
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * f;
}

template <typename T>
double global_norm(const GradientList<T>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (T v : g) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(s);
}

template <typename T>
double clip_gradients(GradientList<T>& grads, double max_norm) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i][j])) {
        throw NonFiniteError("non-finite gradient in tensor " + std::to_string(i) + " at index " + std::to_string(j));
      }
    }
  }
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    auto rescale = [&grads](T s) {
      for (auto& g : grads) {
        for (T& v : g) v *= s;
      }
    };
    rescale(static_cast<T>(max_norm / norm));
    // Rounding in T can leave the result a few ulps above the bound.
    while (global_norm(grads) > max_norm) rescale(T(1) - 4 * std::numeric_limits<T>::epsilon());
  }
  return norm;
}

template <typename T>
OptimizerState<T> fresh_optimizer_state(const ParameterSet<T>& params) {
  OptimizerState<T> s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.tensor.size(), T(0));
    s.v.emplace_back(e.tensor.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const GradientList<T>& grads, OptimizerState<T>& state, double lr,
               const TrainConfig& cfg) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto theta = entries[i].tensor.mutable_values();
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
      throw std::invalid_argument("adam_step: shape mismatch for '" + entries[i].name + "'");
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] = static_cast<T>(theta[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

std::string StepLog::format() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld %.9g %.9g %.9g %.9g %.9g %.17g %.17g", static_cast<long long>(step),
                static_cast<double>(loss), static_cast<double>(l_data), static_cast<double>(l_grad),
                static_cast<double>(l_gc), static_cast<double>(l_reg), lr, grad_norm);
  return buf;
}

std::vector<std::pair<int, int>> sample_batch(const TrainConfig& cfg, const DatasetManifest& m, std::int64_t step) {
  const SplitRange r = m.train;
  if (r.size() < 1) throw std::invalid_argument("sample_batch: empty training split");
  Rng rng(derive_seed(cfg.seed ^ 0x7472616eULL, static_cast<std::uint64_t>(step)));
  std::vector<int> pool(r.size());
  for (int i = 0; i < r.size(); ++i) pool[i] = r.begin + i;
  const int n = std::min(cfg.batch_locations, r.size());
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < n; ++i) {
    const auto j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(pool.size() - i)));
    std::swap(pool[i], pool[j]);
    const int variant =
        cfg.use_augmentations ? static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(m.augmentations + 1))) : 0;
    out.emplace_back(pool[i], variant);
  }
  return out;
}

namespace {

std::vector<float> pack_u64(std::uint64_t v) {
  return {std::bit_cast<float>(static_cast<std::uint32_t>(v & 0xffffffffu)),
          std::bit_cast<float>(static_cast<std::uint32_t>(v >> 32))};
}

std::uint64_t unpack_u64(const CheckpointEntry& e) {
  if (e.values.size() != 2) throw FormatError("checkpoint: '" + e.name + "' must hold 2 words");
  return static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(e.values[0])) |
         (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(e.values[1])) << 32);
}

}  // namespace

std::vector<CheckpointEntry> training_entries(const ModelParams& params, const OptimizerState<float>& state) {
  std::vector<CheckpointEntry> out = parameter_entries(params);
  const auto& entries = params.entries();
  for (const char* kind : {"adam.m/", "adam.v/"}) {
    const auto& moments = kind[5] == 'm' ? state.m : state.v;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      CheckpointEntry c;
      c.name = kind + entries[i].name;
      for (int d : entries[i].tensor.shape()) c.shape.push_back(static_cast<std::uint32_t>(d));
      c.values = moments[i];
      out.push_back(std::move(c));
    }
  }
  out.push_back({"train.step", {2}, pack_u64(static_cast<std::uint64_t>(state.step))});
  return out;
}

std::int64_t load_training_entries(const std::vector<CheckpointEntry>& entries, ModelParams& params,
                                   OptimizerState<float>& state) {
  load_parameter_entries(entries, params);
  state = fresh_optimizer_state(params);
  const auto& ps = params.entries();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (const char* kind : {"adam.m/", "adam.v/"}) {
      const CheckpointEntry* c = find_entry(entries, kind + ps[i].name);
      if (!c) throw FormatError("checkpoint: missing optimizer state '" + std::string(kind) + ps[i].name + "'");
      auto& dst = kind[5] == 'm' ? state.m[i] : state.v[i];
      if (c->values.size() != dst.size()) throw FormatError("checkpoint: optimizer state size mismatch");
      dst = c->values;
    }
  }
  const CheckpointEntry* s = find_entry(entries, "train.step");
  if (!s) throw FormatError("checkpoint: missing 'train.step'");
  state.step = static_cast<std::int64_t>(unpack_u64(*s));
  return state.step;
}

StepLog train_step(const Model<float>& model, ModelParams& params, OptimizerState<float>& state,
                   const std::vector<Sample>& batch, const TrainConfig& cfg) {
  const Labels labels = batch_labels(batch);
  const std::vector<ViewBundle> bundles = batch_bundles(batch);
  StepLog log;
  log.step = state.step;
  GradientList<float> grads;
  {
    const Prediction<float> pred = model.refine(bundles);
    const LossTerms<float> terms = compute_losses(pred, bundles, labels, params, cfg.weights, cfg.gc_drive);
    log.loss = terms.total.item();
    log.l_data = terms.data.item();
    log.l_grad = terms.grad.item();
    log.l_gc = terms.gc.item();
    log.l_reg = terms.reg.item();
    if (!std::isfinite(log.loss)) {
      throw NonFiniteError("non-finite loss at step " + std::to_string(state.step));
    }
    const ad::Gradients<float> g = ad::backward(terms.total);
    for (const auto& e : params.entries()) grads.push_back(g.of(e.tensor));
  }
  log.grad_norm = clip_gradients(grads, cfg.clip_norm);
  log.lr = lr_at(cfg, state.step);
  adam_step(params, grads, state, log.lr, cfg);
  return log;
}

EvalReport evaluate(const ModelConfig& config, const ModelParams& params, const Dataset& data, Split split,
                    const PlaneDump& dump) {
  const Model<float> model(config, params.frozen());
  MetricsAccumulator input, refined;
  const SplitRange r = data.manifest().range(split);
  if (r.size() < 1) throw UndefinedMetricError("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  for (int loc = r.begin; loc < r.end; ++loc) {
    const Sample s = data.load(loc, 0);
    const Prediction<float> pred = model.refine({s.bundle});
    const auto out = pred.refined.values();
    for (std::size_t v = 0; v < s.bundle.views.size(); ++v) {
      const auto& lq = s.bundle.views[v].idepth_lq.storage();
      const auto& hq = s.hq_idepth[v].storage();
      const std::vector<float> d_star(out.begin() + v * lq.size(), out.begin() + (v + 1) * lq.size());
      input.add(lq, hq);
      refined.add(d_star, hq);
      if (dump) dump(d_star, hq, lq);
    }
  }
  return {input.report(), refined.report()};
}

namespace {

// Keeps only log lines of steps before `step`, so a resumed run appends a clean continuation.
// Validation lines carry the post-step count, so their cutoff is one past the checkpoint.
void truncate_log(const fs::path& path, std::int64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#' || std::stoll(line) < step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

}  // namespace

TrainResult train_loop(const Dataset& data, const ModelConfig& model_config, const TrainConfig& cfg,
                       const TrainOptions& options) {
  cfg.validate();
  model_config.validate();
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create '" + options.out_dir.string() + "': " + ec.message());

  TrainResult result;
  result.params = init_parameters<float>(model_config, derive_seed(cfg.seed, 100));
  OptimizerState<float> state = fresh_optimizer_state(result.params);
  double best = std::numeric_limits<double>::infinity();
  if (options.resume) {
    const auto entries = read_checkpoint(*options.resume);
    load_training_entries(entries, result.params, state);
    if (const CheckpointEntry* b = find_entry(entries, "train.best_imae")) {
      best = std::bit_cast<double>(unpack_u64(*b));
    }
  }
  const Model<float> model(model_config, result.params);

  {
    const json run{{"model", config_to_json(model_config)}, {"train", cfg.to_json()}};
    const std::string text = run.dump(2) + "\n";
    write_file(options.out_dir / "config.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  const fs::path log_path = options.out_dir / "train.log";
  const fs::path val_path = options.out_dir / "val.log";
  if (options.resume) {
    truncate_log(log_path, state.step);
    truncate_log(val_path, state.step + 1);
  }
  std::ofstream log(log_path, options.resume ? std::ios::app : std::ios::trunc);
  std::ofstream val(val_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!log || !val) throw IoError("cannot open logs in '" + options.out_dir.string() + "'");
  if (!options.resume) {
    log << "# step loss l_data l_grad l_gc l_reg lr grad_norm\n";
    val << "# step val_imae val_irmse\n";
  }

  auto checkpoint = [&](const fs::path& path) {
    auto entries = training_entries(result.params, state);
    entries.push_back({"train.best_imae", {2}, pack_u64(std::bit_cast<std::uint64_t>(best))});
    write_checkpoint(path, entries);
    const std::string text = config_to_json(model_config).dump(2) + "\n";
    write_file(config_sidecar(path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  const bool has_val = data.manifest().val.size() > 0;
  auto validate = [&]() {
    if (!has_val) return;
    const EvalReport r = evaluate(model_config, result.params, data, Split::val);
    char line[128];
    std::snprintf(line, sizeof line, "%lld %.9g %.9g\n", static_cast<long long>(state.step), r.refined.imae,
                  r.refined.irmse);
    val << line << std::flush;
    if (r.refined.imae < best) {
      best = r.refined.imae;
      save_model(options.out_dir / "best.mvrf", model_config, result.params);
    }
  };

  if (!options.resume) {
    checkpoint(options.out_dir / "last.mvrf");
    validate();
  }
  while (state.step < cfg.total_steps) {
    std::vector<Sample> batch;
    for (const auto& [loc, variant] : sample_batch(cfg, data.manifest(), state.step)) {
      batch.push_back(data.load(loc, variant));
    }
    const StepLog entry = train_step(model, result.params, state, batch, cfg);
    log << entry.format() << "\n" << std::flush;
    if (options.progress) *options.progress << entry.format() << "\n" << std::flush;
    result.log.push_back(entry);

    const bool stop = options.stop_after >= 0 && state.step >= options.stop_after;
    if (state.step % cfg.validate_every == 0 || state.step == cfg.total_steps) validate();
    if (state.step % cfg.checkpoint_every == 0 || state.step == cfg.total_steps || stop) {
      checkpoint(options.out_dir / "last.mvrf");
      if (cfg.keep_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%08lld.mvrf", static_cast<long long>(state.step));
        checkpoint(options.out_dir / name);
      }
    }
    if (stop) break;
  }
  result.final_step = state.step;
  result.best_val_imae = best;
  return result;
}

template double global_norm(const GradientList<float>&);
template double global_norm(const GradientList<double>&);
template double clip_gradients(GradientList<float>&, double);
template double clip_gradients(GradientList<double>&, double);
template OptimizerState<float> fresh_optimizer_state(const ParameterSet<float>&);
template OptimizerState<double> fresh_optimizer_state(const ParameterSet<double>&);
template void adam_step(ParameterSet<float>&, const GradientList<float>&, OptimizerState<float>&, double,
                        const TrainConfig&);
template void adam_step(ParameterSet<double>&, const GradientList<double>&, OptimizerState<double>&, double,
                        const TrainConfig&);

}  // namespace mvr
