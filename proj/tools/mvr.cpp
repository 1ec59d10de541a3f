// mvr: dataset generation, training, evaluation, inference and ablation.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvr/commands.hpp"

namespace {

template <typename T>
std::optional<T> opt(bool given, const T& value) {
  return given ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view depth map refinement toolkit"};
  app.require_subcommand(1);

  // generate
  mvr::GenerateOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate", "Render a synthetic dataset");
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--locations", gen.locations, "Number of locations")->check(CLI::PositiveNumber);
  g->add_option("--augmentations", gen.augmentations, "Perturbed copies per view")->check(CLI::NonNegativeNumber);
  g->add_option("--downsample", gen.downsample, "Divide the 96x288 resolution by this")->check(CLI::PositiveNumber);
  g->add_option("--out", gen_out, "Output directory")->required();
  g->add_option("--extent", gen.scene.extent, "Ground plane side length in metres");
  g->add_option("--boxes", gen.scene.n_boxes, "Box obstacles");
  g->add_option("--walls", gen.scene.n_walls, "Wall segments");
  g->add_option("--noise", gen.scene.corruption.noise_sigma, "Corruption: vertex noise sigma (m)");
  g->add_option("--holes", gen.scene.corruption.hole_fraction, "Corruption: dropped triangle fraction");
  g->add_option("--bulge", gen.scene.corruption.bulge_amplitude, "Corruption: low-frequency bulge amplitude (m)");
  g->add_option("--bulge-wavelength", gen.scene.corruption.bulge_wavelength, "Corruption: bulge wavelength (m)");

  // train
  mvr::cli::TrainArgs tr;
  std::string tr_data, tr_config, tr_out, tr_resume;
  std::int64_t tr_steps = 0;
  std::uint64_t tr_seed = 0;
  auto* t = app.add_subcommand("train", "Train a refinement model");
  t->add_option("--data", tr_data, "Dataset directory")->required();
  auto* t_cfg = t->add_option("--config", tr_config, "Run config JSON {model, train}");
  t->add_option("--out", tr_out, "Run directory")->required();
  auto* t_res = t->add_option("--resume", tr_resume, "Training checkpoint to resume from");
  auto* t_steps = t->add_option("--steps", tr_steps, "Override total steps")->check(CLI::NonNegativeNumber);
  auto* t_seed = t->add_option("--seed", tr_seed, "Override training seed");
  t->add_flag("-v,--verbose", tr.verbose, "Echo every log line");

  // eval
  mvr::cli::EvalArgs ev;
  std::string ev_data, ev_ckpt, ev_split = "test", ev_out;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  e->add_option("--data", ev_data, "Dataset directory")->required();
  e->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
  e->add_option("--split", ev_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  auto* e_out = e->add_option("--out", ev_out, "Metrics JSON output");

  // infer
  mvr::cli::InferArgs in;
  std::string in_ckpt, in_view, in_out;
  auto* i = app.add_subcommand("infer", "Refine one view or one location");
  i->add_option("--ckpt", in_ckpt, "Model checkpoint")->required();
  i->add_option("--view", in_view, "View directory or location directory")->required();
  i->add_option("--out", in_out, "Output directory")->required();

  // ablate
  mvr::cli::AblateArgs ab;
  std::string ab_data, ab_out, ab_config;
  std::int64_t ab_steps = 0;
  auto* a = app.add_subcommand("ablate", "Train and compare every aggregation variant");
  a->add_option("--data", ab_data, "Dataset directory")->required();
  a->add_option("--out", ab_out, "Output directory")->required();
  auto* a_cfg = a->add_option("--config", ab_config, "Run config JSON {model, train}");
  auto* a_steps = a->add_option("--steps", ab_steps, "Override total steps")->check(CLI::NonNegativeNumber);
  a->add_option("--seeds", ab.seeds, "Training seeds");
  a->add_option("--only", ab.only, "Restrict to these variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error: usage: " << err.what() << "\n";
    return 2;
  }

  try {
    mvr::cli::apply_thread_env();
    if (*g) {
      mvr::cli::cmd_generate(gen, gen_out, std::cout);
    } else if (*t) {
      tr.data = tr_data;
      tr.out = tr_out;
      if (*t_cfg) tr.config = tr_config;
      if (*t_res) tr.resume = tr_resume;
      tr.steps = opt(static_cast<bool>(*t_steps), tr_steps);
      tr.seed = opt(static_cast<bool>(*t_seed), tr_seed);
      mvr::cli::cmd_train(tr, std::cout);
    } else if (*e) {
      ev.data = ev_data;
      ev.ckpt = ev_ckpt;
      ev.split = mvr::split_from_string(ev_split);
      if (*e_out) ev.out = ev_out;
      mvr::cli::cmd_eval(ev, std::cout);
    } else if (*i) {
      in.ckpt = in_ckpt;
      in.view = in_view;
      in.out = in_out;
      mvr::cli::cmd_infer(in, std::cout);
    } else if (*a) {
      ab.data = ab_data;
      ab.out = ab_out;
      if (*a_cfg) ab.config = ab_config;
      ab.steps = opt(static_cast<bool>(*a_steps), ab_steps);
      mvr::cli::cmd_ablate(ab, std::cout);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << mvr::cli::error_category(ex) << ": " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
