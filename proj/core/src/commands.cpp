#include "mvr/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "mvr/autodiff.hpp"
#include "mvr/checkpoint.hpp"
#include "mvr/errors.hpp"

namespace mvr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view error_category(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
  if (dynamic_cast<const UndefinedMetricError*>(&e)) return "undefined_metric";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const std::out_of_range*>(&e)) return "out_of_range";
  if (dynamic_cast<const json::exception*>(&e)) return "format";
  return "internal";
}

int apply_thread_env() {
  if (const char* env = std::getenv("MVR_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1 || n > 1024) {
      throw std::invalid_argument("MVR_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    ad::set_num_threads(static_cast<int>(n));
  }
  return ad::num_threads();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json_file(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.input_channels = j.value("input_channels", c.input_channels);
  c.base_width = j.value("base_width", c.base_width);
  c.aggregation = aggregation_from_string(j.value("aggregation", std::string(to_string(c.aggregation))));
  c.feature_transform = j.value("feature_transform", c.feature_transform);
  c.fsr_dim = j.value("fsr_dim", c.fsr_dim);
  c.fsr_hidden = j.value("fsr_hidden", c.fsr_hidden);
  c.fsr_layers = j.value("fsr_layers", c.fsr_layers);
  c.validate();
  return c;
}

}  // namespace

RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig rc;
  if (!path) return rc;
  const json j = read_json_file(*path);
  if (!j.is_object()) throw FormatError(path->string() + ": expected an object");
  try {
    if (j.contains("model")) rc.model = model_config_from(j.at("model"));
    if (j.contains("train")) rc.train = TrainConfig::from_json(j.at("train"));
  } catch (const json::exception& e) {
    throw FormatError(path->string() + ": " + e.what());
  }
  return rc;
}

DatasetManifest cmd_generate(const GenerateOptions& options, const fs::path& out, std::ostream& log) {
  const DatasetManifest m = generate_dataset(options, out);
  log << "generated " << m.locations << " locations x " << m.views_per_location << " views (+" << m.augmentations
      << " augmentations) at " << m.height << "x" << m.width << " in " << out.string() << "\n";
  log << "splits: train [" << m.train.begin << "," << m.train.end << ") val [" << m.val.begin << "," << m.val.end
      << ") test [" << m.test.begin << "," << m.test.end << ")\n";
  return m;
}

TrainResult cmd_train(const TrainArgs& args, std::ostream& log) {
  RunConfig rc = load_run_config(args.config);
  if (args.steps) rc.train.total_steps = *args.steps;
  if (args.seed) rc.train.seed = *args.seed;
  rc.train.validate();
  const Dataset data = Dataset::open(args.data);
  TrainOptions opts;
  opts.out_dir = args.out;
  opts.resume = args.resume;
  opts.progress = args.verbose ? &log : nullptr;
  TrainResult r = train_loop(data, rc.model, rc.train, opts);
  log << "trained to step " << r.final_step << ", best val iMAE " << r.best_val_imae << "\n";
  return r;
}

EvalReport cmd_eval(const EvalArgs& args, std::ostream& log) {
  const Dataset data = Dataset::open(args.data);
  const LoadedModel m = load_model(args.ckpt);
  const EvalReport r = evaluate(m.config, m.params, data, args.split);
  log << r.to_table();
  if (args.out) {
    json j = r.to_json();
    j["split"] = std::string(to_string(args.split));
    j["checkpoint"] = args.ckpt.string();
    write_text(*args.out, j.dump(2) + "\n");
  }
  return r;
}

std::vector<std::uint8_t> preview_bytes(const std::vector<float>& idepth) {
  std::vector<std::uint8_t> out(idepth.size());
  for (std::size_t i = 0; i < idepth.size(); ++i) {
    const float t = std::clamp(idepth[i] / kPreviewMaxIdepth, 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(255.0f * t));
  }
  return out;
}

void write_pgm(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("write_pgm: size mismatch");
  std::string data = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  data.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_text(path, data);
}

void cmd_infer(const InferArgs& args, std::ostream& log) {
  const LoadedModel m = load_model(args.ckpt);
  std::vector<StoredView> views;
  if (fs::exists(args.view / "meta.json")) {
    views.push_back(read_view(args.view));
  } else {
    for (ViewTag tag : kViewTags) {
      const fs::path dir = args.view / ("view_" + std::string(to_string(tag)));
      if (!fs::exists(dir / "meta.json")) throw IoError("no view directory '" + dir.string() + "'");
      views.push_back(read_view(dir));
    }
  }
  if (views.size() == 1 && m.config.aggregation != Aggregation::none) {
    log << "note: single view given; aggregation has no neighbours\n";
  }
  ViewBundle bundle;
  for (const auto& v : views) bundle.views.push_back(make_view_input(v.lq));
  const Model<float> model(m.config, m.params.frozen());
  const Prediction<float> pred = model.refine({bundle});
  const auto refined = pred.refined.values();

  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw IoError("cannot create '" + args.out.string() + "': " + ec.message());
  const std::size_t plane = bundle.views.front().idepth_lq.size();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& in = bundle.views[i].idepth_lq;
    const fs::path dir = args.out / std::string(to_string(views[i].lq.tag));
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    const std::vector<float> d(refined.begin() + i * plane, refined.begin() + (i + 1) * plane);
    write_file(dir / "idepth_refined.f32",
               std::span(reinterpret_cast<const std::uint8_t*>(d.data()), d.size() * sizeof(float)));
    write_pgm(dir / "preview_input.pgm", in.height(), in.width(), preview_bytes(in.storage()));
    write_pgm(dir / "preview_refined.pgm", in.height(), in.width(), preview_bytes(d));
    const json meta{{"height", in.height()},
                    {"width", in.width()},
                    {"tag", std::string(to_string(views[i].lq.tag))},
                    {"checkpoint", args.ckpt.string()},
                    {"preview", {{"encoding", "byte = round(255 * min(idepth / max_idepth, 1))"},
                                 {"max_idepth", kPreviewMaxIdepth}}}};
    write_text(dir / "meta.json", meta.dump(2) + "\n");
    log << "wrote " << dir.string() << "\n";
  }
}

std::vector<AblationVariant> ablation_variants() {
  return {{"baseline", Aggregation::none, false},
          {"average", Aggregation::average, false},
          {"average+fsr", Aggregation::average, true},
          {"attention", Aggregation::attention, false},
          {"attention+fsr", Aggregation::attention, true}};
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out = "| variant | d1.05 | d1.15 | d1.25 | d1.56 | d1.95 | iMAE | iRMSE |\n";
  out += "|---|---|---|---|---|---|---|---|\n";
  char line[256];
  for (const auto& [name, r] : rows) {
    std::snprintf(line, sizeof line, "| %s | %.4f | %.4f | %.4f | %.4f | %.4f | %.6f | %.6f |\n", name.c_str(),
                  r.delta[0], r.delta[1], r.delta[2], r.delta[3], r.delta[4], r.imae, r.irmse);
    out += line;
  }
  return out;
}

json AblationResult::to_json() const {
  json rs = json::array();
  for (const auto& r : rows) {
    json seeds = json::array();
    for (const auto& s : r.per_seed) seeds.push_back(s.to_json());
    rs.push_back({{"name", r.name}, {"median", r.median.to_json()}, {"per_seed", seeds}});
  }
  return {{"input", input.to_json()}, {"rows", rs}};
}

std::string AblationResult::to_table() const {
  std::vector<std::pair<std::string, MetricsReport>> t{{"input", input}};
  for (const auto& r : rows) t.emplace_back(r.name, r.median);
  return metrics_table(t);
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MetricsReport median_report(const std::vector<MetricsReport>& rs) {
  MetricsReport out = rs.front();
  auto column = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(get(r));
    return median(v);
  };
  for (std::size_t k = 0; k < out.delta.size(); ++k) out.delta[k] = column([k](const MetricsReport& r) { return r.delta[k]; });
  out.imae = column([](const MetricsReport& r) { return r.imae; });
  out.irmse = column([](const MetricsReport& r) { return r.irmse; });
  return out;
}

}  // namespace

AblationResult cmd_ablate(const AblateArgs& args, std::ostream& log) {
  if (args.seeds.empty()) throw std::invalid_argument("ablate: need at least one seed");
  const RunConfig rc = load_run_config(args.config);
  const Dataset data = Dataset::open(args.data);
  AblationResult result;
  bool have_input = false;
  for (const auto& v : ablation_variants()) {
    if (!args.only.empty() && std::find(args.only.begin(), args.only.end(), v.name) == args.only.end()) continue;
    AblationRow row;
    row.name = v.name;
    for (std::uint64_t seed : args.seeds) {
      ModelConfig mc = rc.model;
      mc.aggregation = v.aggregation;
      mc.feature_transform = v.feature_transform;
      TrainConfig tc = rc.train;
      tc.seed = seed;
      if (args.steps) tc.total_steps = *args.steps;
      std::string dirname = v.name;
      std::replace(dirname.begin(), dirname.end(), '+', '_');
      TrainOptions opts;
      opts.out_dir = args.out / dirname / ("seed_" + std::to_string(seed));
      log << "ablate: " << v.name << " seed " << seed << " (" << tc.total_steps << " steps)\n" << std::flush;
      const TrainResult tr = train_loop(data, mc, tc, opts);
      const fs::path best = opts.out_dir / "best.mvrf";
      const ModelParams params = fs::exists(best) ? load_model(best).params : tr.params;
      const EvalReport er = evaluate(mc, params, data, Split::test);
      if (!have_input) {
        result.input = er.input;
        have_input = true;
      }
      log << er.to_table() << std::flush;
      row.per_seed.push_back(er.refined);
    }
    row.median = median_report(row.per_seed);
    result.rows.push_back(std::move(row));
  }
  std::error_code ec;
  fs::create_directories(args.out, ec);
  write_text(args.out / "ablation.json", result.to_json().dump(2) + "\n");
  write_text(args.out / "ablation.md", result.to_table());
  log << result.to_table();
  return result;
}

}  // namespace mvr::cli
