#include <benchmark/benchmark.h>

#include <vector>

#include "mvr/loss.hpp"
#include "mvr/net.hpp"
#include "mvr/scene.hpp"

namespace {

// One location's four views, rendered at the default resolution divided by `downsample`.
struct Fixture {
  std::vector<mvr::ViewBundle> bundles;
  mvr::Labels labels;

  Fixture(int downsample, int locations) {
    const mvr::SceneSpec spec{11, 80.0, 24, 8, {0.03, 0.02, 0.15, 8.0}};
    const auto clean = mvr::build_scene(spec);
    const auto corrupted = mvr::corrupt_mesh(clean, spec.corruption, 5);
    const auto k = mvr::default_intrinsics().scaled(downsample);
    std::vector<float> hq, lq;
    for (int loc = 0; loc < locations; ++loc) {
      mvr::ViewBundle b;
      for (const auto& r : mvr::render_location(clean, corrupted, mvr::trajectory_pose(loc, 16), k, std::nullopt)) {
        b.views.push_back(mvr::make_view_input(r.lq));
        hq.insert(hq.end(), r.hq_idepth.storage().begin(), r.hq_idepth.storage().end());
        lq.insert(lq.end(), r.lq.idepth.storage().begin(), r.lq.idepth.storage().end());
      }
      bundles.push_back(std::move(b));
    }
    labels = mvr::make_labels(hq, lq);
  }
};

mvr::ModelConfig config_for(int variant) {
  mvr::ModelConfig c;
  c.aggregation = variant == 0 ? mvr::Aggregation::none
                  : variant <= 2 ? mvr::Aggregation::average
                                 : mvr::Aggregation::attention;
  c.feature_transform = variant == 2 || variant == 4;
  return c;
}

// Args: variant (0 none, 1 average, 2 average+fsr, 3 attention, 4 attention+fsr), downsample.
void BM_RefineForward(benchmark::State& state) {
  const Fixture f(int(state.range(1)), 1);
  const auto config = config_for(int(state.range(0)));
  const auto params = mvr::init_parameters<float>(config, 1).frozen();
  const mvr::Model<float> model(config, params);
  for (auto _ : state) benchmark::DoNotOptimize(model.refine(f.bundles).refined);
}
BENCHMARK(BM_RefineForward)
    ->ArgsProduct({{0, 1, 2, 3, 4}, {2}})
    ->Args({0, 1})
    ->Unit(benchmark::kMillisecond);

// Forward, loss and backward for a batch of four locations.
void BM_TrainStepGradients(benchmark::State& state) {
  const Fixture f(int(state.range(1)), 4);
  const auto config = config_for(int(state.range(0)));
  const auto params = mvr::init_parameters<float>(config, 1);
  const mvr::Model<float> model(config, params);
  const mvr::LossWeights w;
  for (auto _ : state) {
    const auto pred = model.refine(f.bundles);
    const auto terms = mvr::compute_losses(pred, f.bundles, f.labels, params, w, mvr::GcDrive::predicted);
    auto g = mvr::ad::backward(terms.total);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_TrainStepGradients)->Args({0, 2})->Args({2, 2})->Unit(benchmark::kSecond)->Iterations(2);

}  // namespace
