#include <benchmark/benchmark.h>

#include <vector>

#include "mvr/autodiff.hpp"
#include "mvr/rng.hpp"
#include "mvr/scene.hpp"
#include "mvr/warp.hpp"

namespace {

using mvr::ad::Tensor;

Tensor<float> random_tensor(mvr::ad::Shape shape, std::uint64_t seed, bool grad) {
  mvr::Rng rng(seed);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(mvr::normal(rng, 0.0, 0.1));
  return grad ? Tensor<float>::parameter(shape, std::move(v)) : Tensor<float>::constant(shape, std::move(v));
}

// Args: batch, height, width, cin, cout, kernel, stride.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 48, 144, 16, 16, 3, 1});
  b->Args({16, 24, 72, 32, 32, 3, 1});
  b->Args({16, 12, 36, 64, 64, 3, 1});
  b->Args({16, 48, 144, 48, 48, 3, 1});
  b->Args({16, 48, 144, 8, 16, 7, 1});
  b->Unit(benchmark::kMillisecond);
}

double conv_flops(const benchmark::State& s) {
  const double ho = (s.range(1) + s.range(6) - 1) / s.range(6);
  const double wo = (s.range(2) + s.range(6) - 1) / s.range(6);
  return 2.0 * s.range(0) * ho * wo * s.range(3) * s.range(4) * s.range(5) * s.range(5);
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto x = random_tensor({int(state.range(0)), int(state.range(1)), int(state.range(2)), int(state.range(3))}, 1, false);
  const auto w = random_tensor({int(state.range(5)), int(state.range(5)), int(state.range(3)), int(state.range(4))}, 2, false);
  for (auto _ : state) benchmark::DoNotOptimize(mvr::ad::conv2d(x, w, int(state.range(6))));
  state.counters["GFLOP/s"] = benchmark::Counter(conv_flops(state) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward)->Apply(conv_args);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto x = random_tensor({int(state.range(0)), int(state.range(1)), int(state.range(2)), int(state.range(3))}, 1, true);
  const auto w = random_tensor({int(state.range(5)), int(state.range(5)), int(state.range(3)), int(state.range(4))}, 2, true);
  for (auto _ : state) {
    auto g = mvr::ad::backward(mvr::ad::sum(mvr::ad::conv2d(x, w, int(state.range(6)))));
    benchmark::DoNotOptimize(g);
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(3.0 * conv_flops(state) * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForwardBackward)->Apply(conv_args);

void BM_GroupNormForwardBackward(benchmark::State& state) {
  const int c = int(state.range(0));
  const auto x = random_tensor({16, 48, 144, c}, 3, true);
  const auto gamma = Tensor<float>::parameter({c}, std::vector<float>(c, 1.0f));
  const auto beta = Tensor<float>::parameter({c}, std::vector<float>(c, 0.0f));
  for (auto _ : state) {
    auto g = mvr::ad::backward(mvr::ad::sum(mvr::ad::group_norm(x, 8, gamma, beta, 1e-5f)));
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_GroupNormForwardBackward)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_EluForwardBackward(benchmark::State& state) {
  const auto x = random_tensor({16, 48, 144, 48}, 4, true);
  for (auto _ : state) {
    auto g = mvr::ad::backward(mvr::ad::sum(mvr::ad::elu(x)));
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_EluForwardBackward)->Unit(benchmark::kMillisecond);

void BM_Rasterize(benchmark::State& state) {
  const mvr::SceneSpec spec{7, 80.0, 24, 8, {}};
  const auto mesh = mvr::build_scene(spec);
  const auto k = mvr::default_intrinsics().scaled(int(state.range(0)));
  const auto pose = mvr::rig_pose(mvr::trajectory_pose(3, 16), mvr::ViewTag::left);
  for (auto _ : state) benchmark::DoNotOptimize(mvr::rasterize(mesh, k, pose));
  state.counters["triangles"] = static_cast<double>(mesh.triangles.size());
}
BENCHMARK(BM_Rasterize)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_ComputeWarp(benchmark::State& state) {
  const mvr::SceneSpec spec{7, 80.0, 24, 8, {}};
  const auto mesh = mvr::build_scene(spec);
  const auto k = mvr::default_intrinsics();
  const auto vehicle = mvr::trajectory_pose(3, 16);
  const auto left = mvr::rig_pose(vehicle, mvr::ViewTag::left);
  const auto back = mvr::rig_pose(vehicle, mvr::ViewTag::back);
  const auto view = mvr::rasterize(mesh, k, left);
  const auto back_from_left = mvr::invert(back) * left;
  for (auto _ : state) benchmark::DoNotOptimize(mvr::compute_warp(view.idepth, k, back_from_left));
}
BENCHMARK(BM_ComputeWarp)->Unit(benchmark::kMillisecond);

}  // namespace
