// Acceptance suite. Prints one PASS/FAIL line per criterion; exit status is nonzero if any fails.
//
//   mvr_acceptance                 all criteria
//   mvr_acceptance --criterion N   only criterion N
//
// Criteria 7 and 8 check a finished long training protocol (tools/run_protocol.sh) found in
// $MVR_PROTOCOL_DIR, or the build-time default directory.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mvr/autodiff.hpp"
#include "mvr/checkpoint.hpp"
#include "mvr/dataset.hpp"
#include "mvr/geometry.hpp"
#include "mvr/loss.hpp"
#include "mvr/metrics.hpp"
#include "mvr/net.hpp"
#include "mvr/rng.hpp"
#include "mvr/scene.hpp"
#include "mvr/train.hpp"
#include "mvr/warp.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

#ifndef MVR_PROTOCOL_DEFAULT_DIR
#define MVR_PROTOCOL_DEFAULT_DIR "protocol"
#endif

namespace {

namespace ad = mvr::ad;
namespace fs = std::filesystem;
using D = ad::Tensor<double>;
using Inputs = std::vector<D>;
using mvr::Aggregation;
using mvr::CameraIntrinsics;
using mvr::ImageF;
using mvr::Se3Transform;

// Tolerances and thresholds.
constexpr double kWarpTol = 1e-5;
constexpr double kRoundTripTol = 1e-9;
constexpr double kZLawTol = 1e-6;
constexpr double kOcclusionAgreement = 0.99;
constexpr int kOcclusionScenes = 5;
constexpr double kOpRtol = 1e-3;
constexpr double kEndToEndRtol = 5e-3;
constexpr double kClipNorm = 80.0;
constexpr double kLearningGain = 0.30;
constexpr int kProtocolLocations = 96;
constexpr int kProtocolHeight = 48;
constexpr int kProtocolWidth = 144;
constexpr std::int64_t kProtocolSteps = 10000;
constexpr int kProtocolSeeds = 3;
constexpr double kPermutationTol = 1e-6;
constexpr double kGcConsistentMax = 1e-3;
constexpr double kGcBrokenMin = 1e-2;
constexpr int kMetricCases = 1000;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures; the first few messages are kept for the report line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  void note(const std::string& s) { info_ += (info_.empty() ? "" : ", ") + s; }
  Outcome outcome() const {
    if (failures_ == 0) return {true, info_};
    return {false, std::to_string(failures_) + " failure(s): " + notes_ + (info_.empty() ? "" : " | " + info_)};
  }

 private:
  int failures_ = 0;
  std::string notes_, info_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Se3Transform translate(double x, double y, double z) { return {Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, z)}; }

mvr::ModelConfig tiny_config(Aggregation a, bool fsr) {
  mvr::ModelConfig c;
  c.base_width = 4;
  c.aggregation = a;
  c.feature_transform = fsr;
  c.fsr_hidden = 16;
  c.fsr_layers = 2;
  c.fsr_dim = 6;
  return c;
}

// Initialized parameters with every tensor, including the zero output layer, redrawn at random.
mvr::ParameterSet<double> random_params(const mvr::ModelConfig& c, std::uint64_t seed) {
  auto p = mvr::init_parameters<double>(c, seed);
  mvr::Rng rng(seed + 1);
  for (auto& e : p.entries()) {
    for (auto& v : e.tensor.mutable_values()) v = mvr::normal(rng, 0.0, 0.3);
  }
  return p;
}

// Back, left, right and top views of a corrupted scene at 12 x 36.
mvr::ViewBundle small_bundle(std::uint64_t seed, int views) {
  const auto clean = mvr::build_scene({seed, 60.0, 12, 4, {}});
  mvr::CorruptionSpec c;
  c.noise_sigma = 0.05;
  c.hole_fraction = 0.05;
  const auto corrupted = mvr::corrupt_mesh(clean, c, seed + 1);
  const auto k = mvr::default_intrinsics().scaled(8);
  const auto rendered = mvr::render_location(clean, corrupted, mvr::trajectory_pose(2, 5), k, std::nullopt);
  mvr::ViewBundle b;
  const int order[4] = {2, 0, 1, 3};
  for (int i = 0; i < views; ++i) b.views.push_back(mvr::make_view_input(rendered[order[i]].lq));
  return b;
}

mvr::GenerateOptions tiny_generate() {
  mvr::GenerateOptions g;
  g.seed = 21;
  g.locations = 10;
  g.augmentations = 1;
  g.downsample = 8;
  g.scene = {21, 60.0, 12, 4, {0.03, 0.02, 0.15, 8.0}};
  return g;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Vectorized warps against a per-pixel scalar reference, plus two closed-form laws.
Outcome geometry_and_warp() {
  Checker chk;
  const auto mesh = mvr::build_scene({11, 30.0, 6, 0, {}});
  const auto k = mvr::default_intrinsics();
  const auto pose_t = mvr::rig_pose(translate(-0.6, 0.0, 0.0), mvr::ViewTag::left);
  const auto pose_n = mvr::rig_pose(translate(0.6, 0.2, 0.0), mvr::ViewTag::left) * mvr::pose_perturbation(3);
  const auto view_t = mvr::rasterize(mesh, k, pose_t);
  const auto view_n = mvr::rasterize(mesh, k, pose_n);
  const auto n_from_t = mvr::relative(pose_n, pose_t);

  const auto warped = mvr::warp_image(view_n.color, view_t.idepth, k, n_from_t);
  const auto warped_d = mvr::warp_inverse_depth(view_n.idepth, view_t.idepth, k, n_from_t);

  const int h = k.height, w = k.width;
  D d_tensor = D::constant({1, h, w, 1}, std::vector<double>(view_t.idepth.storage().begin(), view_t.idepth.storage().end()));
  D color_tensor = D::constant({1, h, w, 3}, std::vector<double>(view_n.color.storage().begin(), view_n.color.storage().end()));
  const auto wc = ad::warp_coordinates(d_tensor, k, {n_from_t});
  std::vector<std::uint8_t> ad_mask(wc.front.size());
  for (std::size_t i = 0; i < ad_mask.size(); ++i) ad_mask[i] = wc.front[i] && wc.in_bounds[i];
  const D ad_sampled = ad::grid_sample(color_tensor, wc.coords, std::span<const std::uint8_t>(ad_mask));
  const auto ad_values = ad_sampled.values();

  double max_image = 0.0, max_idepth = 0.0, max_ad = 0.0;
  int mask_mismatch = 0, valid = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double d = view_t.idepth(r, c);
      bool ok = false;
      mvr::Pixel uv;
      if (d > 0.0) {
        const auto x_n = mvr::transform_point(n_from_t, mvr::backproject(k, {double(c), double(r)}, d));
        if (const auto p = mvr::try_project(k, x_n)) {
          uv = *p;
          ok = uv.u >= 0.0 && uv.u <= w - 1 && uv.v >= 0.0 && uv.v <= h - 1;
        }
      }
      const std::size_t px = static_cast<std::size_t>(r) * w + c;
      mask_mismatch += ok != static_cast<bool>(warped.mask(r, c));
      mask_mismatch += ok != static_cast<bool>(ad_mask[px]);
      if (!ok) continue;
      ++valid;
      for (int ch = 0; ch < 3; ++ch) {
        const double ref = mvr::test::bilinear_reference(view_n.color, uv.u, uv.v, ch);
        max_image = std::max(max_image, std::abs(warped.image(r, c, ch) - ref));
        max_ad = std::max(max_ad, std::abs(ad_values[px * 3 + ch] - ref));
      }
      const double ref_d = mvr::test::bilinear_reference(view_n.idepth, uv.u, uv.v, 0);
      max_idepth = std::max(max_idepth, std::abs(warped_d.sampled(r, c) - ref_d));
    }
  }
  chk.expect(valid > h * w / 4, "too few warped pixels: " + std::to_string(valid));
  chk.expect(mask_mismatch == 0, std::to_string(mask_mismatch) + " mask disagreements");
  chk.expect(max_image < kWarpTol, "warp_image |d| " + fmt(max_image));
  chk.expect(max_idepth < kWarpTol, "warp_inverse_depth |d| " + fmt(max_idepth));
  chk.expect(max_ad < kWarpTol, "grid_sample |d| " + fmt(max_ad));

  // Round trip through random cameras.
  mvr::Rng rng(5);
  double max_rt = 0.0;
  for (int i = 0; i < 10000; ++i) {
    CameraIntrinsics kk{mvr::uniform(rng, 20, 500), mvr::uniform(rng, 20, 500), mvr::uniform(rng, 0, 300),
                        mvr::uniform(rng, 0, 100), 300, 100};
    const mvr::Pixel p{mvr::uniform(rng, -50, 350), mvr::uniform(rng, -50, 150)};
    const double d = std::exp(mvr::uniform(rng, std::log(1e-3), std::log(1e2)));
    const auto q = mvr::project(kk, mvr::backproject(kk, p, d));
    max_rt = std::max({max_rt, std::abs(q.u - p.u), std::abs(q.v - p.v)});
  }
  chk.expect(max_rt < kRoundTripTol, "round trip " + fmt(max_rt));

  // Pure z translation: reprojected inverse depth is d / (1 + tz d).
  double max_z = 0.0;
  ImageF plane(24, 72, 1);
  for (auto& v : plane.storage()) v = static_cast<float>(mvr::uniform(rng, 0.05, 2.0));
  const auto ks = k.scaled(4);
  D plane_tensor = D::constant({1, 24, 72, 1}, std::vector<double>(plane.storage().begin(), plane.storage().end()));
  for (double tz : {-0.3, 0.25, 0.5, 3.0}) {
    const auto f = mvr::compute_warp(plane, ks, translate(0, 0, tz));
    const auto g = ad::warp_coordinates(plane_tensor, ks, {translate(0, 0, tz)});
    const auto gv = g.reproj_idepth.values();
    for (int r = 0; r < 24; ++r) {
      for (int c = 0; c < 72; ++c) {
        const double d = plane(r, c);
        const double law = d / (1.0 + tz * d);
        max_z = std::max({max_z, std::abs(f.reproj_idepth(r, c) - law), std::abs(gv[r * 72 + c] - law)});
      }
    }
  }
  chk.expect(max_z < kZLawTol, "z law " + fmt(max_z));
  chk.note("max |warp-ref| " + fmt(std::max({max_image, max_idepth, max_ad})) + ", round trip " + fmt(max_rt) +
           ", z law " + fmt(max_z) + ", " + std::to_string(valid) + " px");
  return chk.outcome();
}

struct BoxOverPlane {
  mvr::TriangleMesh mesh;
  Eigen::Vector3d box_min, box_max;
};

// A 60 m ground quad with one random box beside the road; every face is two triangles.
BoxOverPlane box_over_plane(std::uint64_t seed) {
  mvr::Rng rng(seed);
  BoxOverPlane out;
  auto& m = out.mesh;
  const auto quad = [&m](const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c, const Eigen::Vector3d& d,
                         const Eigen::Vector3f& albedo) {
    const auto base = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), {a, b, c, d});
    m.triangles.push_back({base, base + 1, base + 2});
    m.triangles.push_back({base, base + 2, base + 3});
    m.albedo.insert(m.albedo.end(), 2, albedo);
  };
  const double half = 30.0;
  quad({-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}, {0.4f, 0.4f, 0.4f});
  const double length = mvr::uniform(rng, 2.0, 6.0), width = mvr::uniform(rng, 1.0, 3.0), height = mvr::uniform(rng, 1.5, 4.0);
  const double near = mvr::uniform(rng, 3.0, 7.0);
  const double side = mvr::uniform01(rng) < 0.5 ? -1.0 : 1.0;
  const double x0 = mvr::uniform(rng, -5.0, 5.0);
  const double y0 = side > 0 ? near : -near - width;
  const Eigen::Vector3d lo(x0, y0, 0), hi(x0 + length, y0 + width, height);
  out.box_min = lo;
  out.box_max = hi;
  const Eigen::Vector3f red(0.9f, 0.1f, 0.1f);
  auto v = [&](int i, int j, int k) { return Eigen::Vector3d(i ? hi.x() : lo.x(), j ? hi.y() : lo.y(), k ? hi.z() : lo.z()); };
  quad(v(0, 0, 0), v(1, 0, 0), v(1, 0, 1), v(0, 0, 1), red);
  quad(v(0, 1, 0), v(0, 1, 1), v(1, 1, 1), v(1, 1, 0), red);
  quad(v(0, 0, 0), v(0, 0, 1), v(0, 1, 1), v(0, 1, 0), red);
  quad(v(1, 0, 0), v(1, 1, 0), v(1, 1, 1), v(1, 0, 1), red);
  quad(v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1), red);
  m.validate();
  return out;
}

struct OcclusionTally {
  long total = 0, agree = 0, hidden = 0, off_edge = 0;
};

// Two same-side views 3 m apart straddling the box, compared pixel by pixel with ray casting.
OcclusionTally occlusion_against_rays(const mvr::TriangleMesh& mesh, const Eigen::Vector3d& box_min, const Eigen::Vector3d& box_max) {
  const auto k = mvr::default_intrinsics();
  const mvr::test::RayCaster caster(mesh);
  const double xc = 0.5 * (box_min.x() + box_max.x());
  const auto tag = box_min.y() > 0 ? mvr::ViewTag::left : mvr::ViewTag::right;
  const auto pose_t = mvr::rig_pose(translate(xc - 1.5, 0, 0), tag);
  const auto pose_n = mvr::rig_pose(translate(xc + 1.5, 0, 0), tag);
  const auto vt = mvr::rasterize(mesh, k, pose_t);
  const auto vn = mvr::rasterize(mesh, k, pose_n);
  const auto field = mvr::compute_warp(vt.idepth, k, mvr::relative(pose_n, pose_t));
  const auto m = mvr::occlusion_mask(vt.tri_id, vn.tri_id, field);
  const auto valid = field.valid();
  OcclusionTally t;
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const double d = vt.idepth(r, c);
      if (d == 0.0) continue;
      ++t.total;
      const Eigen::Vector3d x_t((c - k.cx) / k.fx / d, (r - k.cy) / k.fy / d, 1.0 / d);
      const bool in_view = valid(r, c);
      const bool blocked = in_view && caster.blocked(pose_n.translation(), pose_t * x_t);
      t.hidden += blocked;
      const bool oracle = in_view && !blocked;
      if (oracle == static_cast<bool>(m(r, c))) {
        ++t.agree;
        continue;
      }
      const int ur = std::clamp(static_cast<int>(std::lround(field.coords(r, c, 1))), 0, k.height - 1);
      const int uc = std::clamp(static_cast<int>(std::lround(field.coords(r, c, 0))), 0, k.width - 1);
      const bool edge = mvr::test::near_id_edge(vt.tri_id, r, c) || (in_view && mvr::test::near_id_edge(vn.tri_id, ur, uc));
      t.off_edge += !edge;
    }
  }
  return t;
}

// 2. Triangle-ID occlusion mask against ray casting on box-over-plane scenes at full resolution.
Outcome occlusion_soundness() {
  Checker chk;
  OcclusionTally all;
  double worst = 1.0;
  for (int s = 0; s < kOcclusionScenes; ++s) {
    const auto scene = box_over_plane(100 + s);
    const auto t = occlusion_against_rays(scene.mesh, scene.box_min, scene.box_max);
    const double rate = t.total ? double(t.agree) / t.total : 0.0;
    worst = std::min(worst, rate);
    chk.expect(rate >= kOcclusionAgreement, "scene " + std::to_string(s) + " agreement " + fmt(rate));
    chk.expect(t.hidden > 0, "scene " + std::to_string(s) + " has no occluded pixels");
    all.total += t.total;
    all.agree += t.agree;
    all.hidden += t.hidden;
    all.off_edge += t.off_edge;
  }
  chk.expect(all.off_edge == 0, std::to_string(all.off_edge) + " disagreements away from ID edges");

  // Generator meshes use small triangles; nearest-pixel ID lookup then rejects more pixels at
  // triangle seams. Reported, and held to the edge rule only.
  const mvr::SceneSpec spec{100, 30.0, 6, 0, {}};
  const auto layout = mvr::scene_layout(spec);
  const auto fine = occlusion_against_rays(mvr::build_scene(spec), layout.boxes.front().min, layout.boxes.front().max);
  chk.expect(fine.off_edge == 0, std::to_string(fine.off_edge) + " generator-mesh disagreements away from ID edges");

  chk.note(std::to_string(kOcclusionScenes) + " scenes, worst agreement " + fmt(100 * worst) + "%, overall " +
           fmt(100.0 * all.agree / std::max(all.total, 1L)) + "%, " + std::to_string(all.hidden) + " occluded px" +
           "; generator mesh " + fmt(100.0 * fine.agree / std::max(fine.total, 1L)) + "%");
  return chk.outcome();
}

// 3. Central finite differences at 64 bits for every op, the losses and the tiny model.
Outcome gradient_correctness() {
  Checker chk;
  using mvr::test::check_gradients;
  using mvr::test::random_param;
  using mvr::test::random_values;
  int checks = 0;
  double worst = 0.0;
  const auto run = [&](const std::string& name, const mvr::test::GradCheckResult& r) {
    ++checks;
    worst = std::max(worst, r.worst_rel);
    chk.expect(r.checked > 0 && r.worst_rel == 0.0, name + " rel " + fmt(r.worst_rel) + " " + r.where);
  };
  const auto wsum = [](const D& y, std::uint64_t seed = 99) {
    return ad::sum(ad::mul(y, D::constant(y.shape(), random_values(y.size(), seed))));
  };
  const auto signed_away_from_zero = [](ad::Shape s, std::uint64_t seed) {
    auto v = random_values(ad::numel(s), seed, 0.2, 1.0);
    mvr::Rng rng(seed + 1);
    for (auto& x : v) x = mvr::uniform01(rng) < 0.5 ? -x : x;
    return D::parameter(s, v);
  };
  const ad::Shape s{2, 3, 4, 2};

  run("add", check_gradients([&](const Inputs& in) { return wsum(ad::add(in[0], in[1])); }, {random_param(s, 1), random_param({2}, 2)}, kOpRtol));
  run("sub", check_gradients([&](const Inputs& in) { return wsum(ad::sub(in[0], in[1])); }, {random_param(s, 3), random_param(s, 4)}, kOpRtol));
  run("mul", check_gradients([&](const Inputs& in) { return wsum(ad::mul(in[0], in[1])); }, {random_param(s, 5), random_param({4, 1}, 6)}, kOpRtol));
  run("div", check_gradients([&](const Inputs& in) { return wsum(ad::div(in[0], in[1])); }, {random_param(s, 7), random_param(s, 8, 0.5, 2.0)}, kOpRtol));
  run("scale", check_gradients([&](const Inputs& in) { return wsum(ad::scale(in[0], -2.5)); }, {random_param(s, 9)}, kOpRtol));
  run("add_scalar", check_gradients([&](const Inputs& in) { return wsum(ad::add_scalar(in[0], 0.7)); }, {random_param(s, 10)}, kOpRtol));
  run("unary", check_gradients([&](const Inputs& in) {
        return wsum(ad::unary<double>(in[0], [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); }));
      }, {random_param(s, 11)}, kOpRtol));
  run("elu", check_gradients([&](const Inputs& in) { return wsum(ad::elu(in[0])); }, {signed_away_from_zero(s, 12)}, kOpRtol));
  run("abs", check_gradients([&](const Inputs& in) { return wsum(ad::abs(in[0])); }, {signed_away_from_zero(s, 13)}, kOpRtol));
  run("square", check_gradients([&](const Inputs& in) { return wsum(ad::square(in[0])); }, {random_param(s, 14)}, kOpRtol));
  run("clamp_min", check_gradients([&](const Inputs& in) { return wsum(ad::clamp_min(in[0], 0.0)); }, {signed_away_from_zero(s, 15)}, kOpRtol));
  run("reshape", check_gradients([&](const Inputs& in) { return wsum(ad::reshape(in[0], {6, 8})); }, {random_param(s, 16)}, kOpRtol));
  run("concat", check_gradients([&](const Inputs& in) { return wsum(ad::concat<double>({in[0], in[1]}, -1)); }, {random_param(s, 17), random_param({2, 3, 4, 3}, 18)}, kOpRtol));
  run("slice", check_gradients([&](const Inputs& in) { return wsum(ad::slice(in[0], 2, 1, 3)); }, {random_param(s, 19)}, kOpRtol));
  run("transpose", check_gradients([&](const Inputs& in) { return wsum(ad::transpose(in[0])); }, {random_param({3, 5}, 20)}, kOpRtol));
  run("sum", check_gradients([&](const Inputs& in) { return ad::square(ad::sum(in[0])); }, {random_param(s, 21)}, kOpRtol));
  run("mean", check_gradients([&](const Inputs& in) { return ad::square(ad::mean(in[0])); }, {random_param(s, 22)}, kOpRtol));
  run("sum(axis)", check_gradients([&](const Inputs& in) { return wsum(ad::sum(in[0], 1)); }, {random_param(s, 23)}, kOpRtol));
  std::vector<std::uint8_t> mask(ad::numel(s));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % 3 != 1;
  const std::span<const std::uint8_t> ms(mask);
  run("masked_sum", check_gradients([&](const Inputs& in) { return ad::square(ad::masked_sum(in[0], ms)); }, {random_param(s, 24)}, kOpRtol));
  run("masked_mean", check_gradients([&](const Inputs& in) { return ad::square(ad::masked_mean(in[0], ms)); }, {random_param(s, 25)}, kOpRtol));
  run("matmul", check_gradients([&](const Inputs& in) { return wsum(ad::matmul(in[0], in[1])); }, {random_param({3, 4}, 26), random_param({4, 5}, 27)}, kOpRtol));
  run("batched_matmul", check_gradients([&](const Inputs& in) { return wsum(ad::batched_matmul(in[0], in[1])); }, {random_param({2, 3, 4}, 28), random_param({2, 4, 2}, 29)}, kOpRtol));
  run("batched_matmul^T", check_gradients([&](const Inputs& in) { return wsum(ad::batched_matmul(in[0], in[1], true)); }, {random_param({2, 3, 4}, 30), random_param({2, 5, 4}, 31)}, kOpRtol));
  run("conv2d/1", check_gradients([&](const Inputs& in) { return wsum(ad::conv2d(in[0], in[1], 1)); }, {random_param({1, 5, 6, 2}, 32), random_param({3, 3, 2, 3}, 33)}, kOpRtol));
  run("conv2d/2", check_gradients([&](const Inputs& in) { return wsum(ad::conv2d(in[0], in[1], 2)); }, {random_param({2, 7, 8, 2}, 34), random_param({5, 5, 2, 2}, 35)}, kOpRtol));
  run("group_norm", check_gradients([&](const Inputs& in) { return wsum(ad::group_norm(in[0], 2, in[1], in[2])); }, {random_param({2, 3, 3, 4}, 36, -2, 2), random_param({4}, 37), random_param({4}, 38)}, kOpRtol));
  run("pixel_shuffle", check_gradients([&](const Inputs& in) { return wsum(ad::pixel_shuffle(in[0], 2)); }, {random_param({2, 2, 3, 8}, 39)}, kOpRtol));
  {
    mvr::Rng rng(40);
    std::vector<double> coords(2 * 3 * 3 * 2);
    for (std::size_t i = 0; i < coords.size(); i += 2) {
      coords[i] = std::floor(mvr::uniform(rng, -1, 5)) + mvr::uniform(rng, 0.1, 0.9);
      coords[i + 1] = std::floor(mvr::uniform(rng, -1, 4)) + mvr::uniform(rng, 0.1, 0.9);
    }
    std::vector<std::uint8_t> gm(2 * 3 * 3, 1);
    gm[4] = 0;
    run("grid_sample", check_gradients([&](const Inputs& in) { return wsum(ad::grid_sample(in[0], in[1], std::span<const std::uint8_t>(gm))); },
                                       {random_param({2, 4, 5, 2}, 41), D::parameter({2, 3, 3, 2}, coords)}, kOpRtol));
  }
  run("softmax", check_gradients([&](const Inputs& in) { return wsum(ad::softmax(in[0], 1)); }, {random_param({2, 3, 4}, 42, -2, 2)}, kOpRtol));
  {
    std::vector<std::uint8_t> sm(24, 1);
    sm[5] = sm[13] = 0;
    run("softmax(mask)", check_gradients([&](const Inputs& in) { return wsum(ad::softmax(in[0], 0, std::span<const std::uint8_t>(sm))); },
                                         {random_param({3, 8}, 43, -2, 2)}, kOpRtol));
  }
  {
    const CameraIntrinsics kk{20.0, 20.0, 3.5, 2.5, 8, 6};
    const std::vector<Se3Transform> poses{Se3Transform::from_euler(0.1, -0.05, 0.02, Eigen::Vector3d(0.3, -0.1, 0.2)),
                                          Se3Transform::from_euler(-0.2, 0.1, 0.0, Eigen::Vector3d(-0.5, 0.0, 0.4))};
    run("warp_coordinates", check_gradients([&](const Inputs& in) {
          const auto w = ad::warp_coordinates(in[0], kk, poses);
          return ad::add(wsum(w.coords, 1), wsum(w.reproj_idepth, 2));
        }, {random_param({2, 6, 8, 1}, 44, 0.2, 1.0)}, kOpRtol));
  }

  // Losses.
  {
    const ad::Shape ps{2, 5, 6, 1};
    std::vector<std::uint8_t> valid(ad::numel(ps), 1);
    valid[7] = valid[20] = 0;
    const std::span<const std::uint8_t> vs(valid);
    const D label = random_param(ps, 45);
    // A constant peak fixes the berHu threshold, so both branches are exercised at a known switch point.
    auto r = random_values(20, 46, 0.2, 4.0);
    mvr::Rng rng(46);
    for (auto& x : r) x = mvr::uniform01(rng) < 0.5 ? -x : x;
    std::vector<std::uint8_t> bm(21, 1);
    bm[1] = 0;
    run("berhu", check_gradients([&](const Inputs& in) {
          return mvr::berhu(ad::concat<double>({in[0], D::constant({1}, {12.0})}, 0), std::span<const std::uint8_t>(bm));
        }, {D::parameter({20}, r)}, kOpRtol));
    run("grad_loss", check_gradients([&](const Inputs& in) { return mvr::grad_loss(in[0], label.detach(), vs); },
                                     {random_param(ps, 47, -3, 3)}, kOpRtol));
  }
  {
    const auto bundle = small_bundle(48, 3);
    std::vector<double> d;
    for (const auto& v : bundle.views) d.insert(d.end(), v.idepth_lq.storage().begin(), v.idepth_lq.storage().end());
    mvr::Rng rng(49);
    for (auto& x : d) x = x > 0 ? x * mvr::uniform(rng, 0.9, 1.1) : 0.0;
    run("gc_loss", check_gradients([&](const Inputs& in) { return mvr::gc_loss(in[0], {bundle}); },
                                   {D::parameter({3, 12, 36, 1}, d)}, kOpRtol, 1e-8, 1e-7, 200));
  }

  // End to end on 12 x 36 input, base_width 4.
  const auto bundle = small_bundle(50, 3);
  const auto geometry = mvr::batch_geometry({bundle});
  const auto weights = random_values(3 * 12 * 36, 52);
  for (const auto& [mode, fsr] : std::vector<std::pair<Aggregation, bool>>{
           {Aggregation::none, false}, {Aggregation::average, true}, {Aggregation::attention, true}}) {
    const auto c = tiny_config(mode, fsr);
    auto params = random_params(c, 51);
    Inputs inputs;
    for (const auto& e : params.entries()) inputs.push_back(e.tensor);
    const auto f = [&](const Inputs&) {
      mvr::Model<double> model(c, params);
      const auto pred = model.refine({bundle}, geometry);
      return ad::sum(ad::mul(pred.error, D::constant(pred.error.shape(), weights)));
    };
    run("end-to-end " + std::string(mvr::to_string(mode)) + (fsr ? "+fsr" : ""),
        check_gradients(f, inputs, kEndToEndRtol, 1e-7, 1e-5, 3));
  }
  chk.note(std::to_string(checks) + " gradient checks");
  return chk.outcome();
}

// 4. Layer output shapes of the default model at 96 x 288 x 8.
Outcome architecture_fidelity() {
  Checker chk;
  struct Row {
    const char* block;
    int h, w, c;
  };
  const std::vector<Row> table{
      {"Input", 96, 288, 8},
      {"Projection", 96, 288, 16},
      {"Residual", 96, 288, 16},
      {"Projection, Residual x2", 48, 144, 32},
      {"Projection, Residual x2", 24, 72, 64},
      {"Projection, Residual x2", 12, 36, 128},
      {"Projection, Residual x5", 6, 18, 256},
      {"Up-projection, Skip", 12, 36, 384},
      {"Up-projection, Skip", 24, 72, 192},
      {"Up-projection, Skip", 48, 144, 96},
      {"Up-projection, Skip", 96, 288, 48},
      {"Residual x2", 96, 288, 48},
      {"Convolution", 96, 288, 1},
  };
  const mvr::ModelConfig cfg;
  const mvr::Model<float> model(cfg, mvr::init_parameters<float>(cfg, 0));
  const auto trace = model.shape_trace(96, 288);
  chk.expect(trace.size() == table.size(), std::to_string(trace.size()) + " rows traced");
  for (std::size_t i = 0; i < std::min(trace.size(), table.size()); ++i) {
    const ad::Shape want{table[i].h, table[i].w, table[i].c};
    chk.expect(trace[i].shape == want, "row " + std::to_string(i + 1) + " (" + table[i].block + ") is " + ad::to_string(trace[i].shape));
  }
  chk.note(std::to_string(table.size()) + " rows");
  return chk.outcome();
}

// 5. Learning rate schedule, gradient clipping and loss weights.
Outcome hyperparameter_fidelity() {
  Checker chk;
  const mvr::TrainConfig cfg;
  chk.expect(mvr::lr_at(cfg, 0) == 1e-4, "lr_at(0) = " + fmt(mvr::lr_at(cfg, 0)));
  chk.expect(mvr::lr_at(cfg, 120000) == 5e-6, "lr_at(120000) = " + fmt(mvr::lr_at(cfg, 120000)));
  chk.expect(std::abs(mvr::lr_at(cfg, 60000) - 0.5 * (1e-4 + 5e-6)) < 1e-15, "lr not linear at midpoint");
  chk.expect(mvr::lr_at(cfg, 500000) == 5e-6, "lr after decay");
  chk.expect(cfg.clip_norm == kClipNorm, "clip_norm default " + fmt(cfg.clip_norm));

  mvr::Rng rng(3);
  double max_post = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    mvr::GradientList<float> g(1 + mvr::uniform_index(rng, 5));
    const double scale = std::exp(mvr::uniform(rng, std::log(1e-3), std::log(1e5)));
    for (auto& t : g) {
      t.resize(1 + mvr::uniform_index(rng, 300));
      for (auto& v : t) v = static_cast<float>(mvr::normal(rng, 0.0, scale));
    }
    const double before = mvr::clip_gradients(g, cfg.clip_norm);
    const double after = mvr::global_norm(g);
    max_post = std::max(max_post, after);
    chk.expect(after <= kClipNorm, "post-clip norm " + fmt(after));
    if (before <= kClipNorm) chk.expect(std::abs(after - before) <= 1e-6 * before, "unclipped gradient changed");
  }

  chk.expect(cfg.weights.data == 1.0 && cfg.weights.grad == 0.1 && cfg.weights.gc == 0.1 && cfg.weights.reg == 1e-6,
             "default loss weights");
  const auto bundle = small_bundle(60, 4);
  std::vector<float> hq;
  for (const auto& v : bundle.views) {
    auto plane = v.idepth_lq.storage();
    for (auto& x : plane) x *= 1.05f;
    hq.insert(hq.end(), plane.begin(), plane.end());
  }
  std::vector<float> lq;
  for (const auto& v : bundle.views) lq.insert(lq.end(), v.idepth_lq.storage().begin(), v.idepth_lq.storage().end());
  const auto labels = mvr::make_labels(hq, lq);
  const auto c = tiny_config(Aggregation::average, true);
  const auto params = random_params(c, 61);
  const mvr::Model<double> model(c, params);
  const auto pred = model.refine({bundle});
  const auto terms = mvr::compute_losses(pred, {bundle}, labels, params, cfg.weights);
  const double expect = terms.data.item() + 0.1 * terms.grad.item() + 0.1 * terms.gc.item() + 1e-6 * terms.reg.item();
  chk.expect(std::abs(terms.total.item() - expect) <= 1e-12 * std::abs(expect), "total loss is not the weighted sum");
  chk.expect(terms.data.item() > 0 && terms.grad.item() > 0 && terms.gc.item() > 0 && terms.reg.item() > 0,
             "a loss term is zero on a generic batch");

  const auto grads = ad::backward(terms.total);
  mvr::GradientList<double> g;
  for (const auto& e : params.entries()) g.push_back(grads.of(e.tensor));
  const double raw = mvr::clip_gradients(g, cfg.clip_norm);
  const double clipped = mvr::global_norm(g);
  chk.expect(clipped <= kClipNorm, "model gradient post-clip " + fmt(clipped));
  chk.note("max post-clip norm " + fmt(max_post) + ", model grad norm " + fmt(raw) + " -> " + fmt(clipped));
  return chk.outcome();
}

// 6. Zero-initialized output layer: refined equals input, exactly.
Outcome identity_start() {
  Checker chk;
  mvr::test::TempDir dir("accept_identity");
  mvr::generate_dataset(tiny_generate(), dir.path());
  const auto data = mvr::Dataset::open(dir.path());
  for (const auto& [mode, fsr] : std::vector<std::pair<Aggregation, bool>>{{Aggregation::none, false},
                                                                           {Aggregation::average, false},
                                                                           {Aggregation::average, true},
                                                                           {Aggregation::attention, false},
                                                                           {Aggregation::attention, true}}) {
    const std::string name = std::string(mvr::to_string(mode)) + (fsr ? "+fsr" : "");
    auto c = tiny_config(mode, fsr);
    const auto params = mvr::init_parameters<float>(c, 7);
    const mvr::Model<float> model(c, params.frozen());
    const auto range = data.manifest().range(mvr::Split::test);
    for (int loc = range.begin; loc < range.end; ++loc) {
      const auto sample = data.load(loc);
      const auto pred = model.refine({sample.bundle});
      const auto refined = pred.refined.values();
      std::size_t off = 0;
      for (const auto& v : sample.bundle.views) {
        const auto& lq = v.idepth_lq.storage();
        chk.expect(std::equal(lq.begin(), lq.end(), refined.begin() + off), name + ": d* != d_lq at location " + std::to_string(loc));
        off += lq.size();
      }
    }
    for (auto split : {mvr::Split::val, mvr::Split::test}) {
      const auto rep = mvr::evaluate(c, params, data, split);
      chk.expect(rep.refined.to_json() == rep.input.to_json(), name + ": evaluate refined != input");
      chk.expect(rep.refined.imae == rep.input.imae && rep.refined.irmse == rep.input.irmse && rep.refined.delta == rep.input.delta,
                 name + ": metrics differ");
    }
  }
  chk.note("5 variants, val and test splits");
  return chk.outcome();
}

fs::path protocol_dir() {
  if (const char* env = std::getenv("MVR_PROTOCOL_DIR")) return env;
  return MVR_PROTOCOL_DEFAULT_DIR;
}

struct ProtocolRun {
  bool complete = false;
  std::string problem;
  double input_imae = 0.0;
  double refined_imae = 0.0;
};

// Checks the data set against the protocol and evaluates one finished run on the test split.
ProtocolRun evaluate_protocol_run(const std::string& variant, int seed) {
  ProtocolRun out;
  const fs::path root = protocol_dir();
  const fs::path data_dir = root / "data";
  if (!fs::exists(data_dir / "manifest.json")) {
    out.problem = "no protocol dataset at " + data_dir.string() + " (run tools/run_protocol.sh)";
    return out;
  }
  const auto data = mvr::Dataset::open(data_dir);
  const auto& m = data.manifest();
  if (m.locations != kProtocolLocations || m.height != kProtocolHeight || m.width != kProtocolWidth) {
    out.problem = "protocol dataset is " + std::to_string(m.locations) + " locations at " + std::to_string(m.height) + "x" +
                  std::to_string(m.width);
    return out;
  }
  std::string dirname = variant;
  std::replace(dirname.begin(), dirname.end(), '+', '_');
  const fs::path run = root / "runs" / dirname / ("seed_" + std::to_string(seed));
  if (!fs::exists(run / "last.mvrf") || !fs::exists(run / "best.mvrf")) {
    out.problem = "no finished run at " + run.string();
    return out;
  }
  auto last = mvr::load_model(run / "last.mvrf");
  auto state = mvr::fresh_optimizer_state(last.params);
  const auto step = mvr::load_training_entries(mvr::read_checkpoint(run / "last.mvrf"), last.params, state);
  if (step != kProtocolSteps) {
    out.problem = variant + " seed " + std::to_string(seed) + " stopped at step " + std::to_string(step);
    return out;
  }
  const auto best = mvr::load_model(run / "best.mvrf");
  const auto rep = mvr::evaluate(best.config, best.params, data, mvr::Split::test);
  out.complete = true;
  out.input_imae = rep.input.imae;
  out.refined_imae = rep.refined.imae;
  return out;
}

// 7. Baseline training reduces test iMAE by at least 30%.
Outcome desk_scale_learning() {
  const auto r = evaluate_protocol_run("baseline", 0);
  if (!r.complete) return {false, "protocol run unavailable: " + r.problem};
  const double gain = 1.0 - r.refined_imae / r.input_imae;
  return {gain >= kLearningGain, "test iMAE " + fmt(r.input_imae) + " -> " + fmt(r.refined_imae) + " (" + fmt(100 * gain) +
                                     "% reduction, need " + fmt(100 * kLearningGain) + "%)"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 8. Median over seeds: average+fsr <= average and average+fsr <= baseline.
Outcome directional_reproduction() {
  std::vector<double> base, avg, fsr;
  for (int seed = 0; seed < kProtocolSeeds; ++seed) {
    for (auto [name, dst] : {std::pair{"baseline", &base}, std::pair{"average", &avg}, std::pair{"average+fsr", &fsr}}) {
      const auto r = evaluate_protocol_run(name, seed);
      if (!r.complete) return {false, "protocol run unavailable: " + r.problem};
      dst->push_back(r.refined_imae);
    }
  }
  const double mb = median(base), ma = median(avg), mf = median(fsr);
  const bool a = mf <= ma, b = mf <= mb;
  return {a && b, "median test iMAE baseline " + fmt(mb) + ", average " + fmt(ma) + ", average+fsr " + fmt(mf) +
                      (a ? "" : "; (a) fsr > average") + (b ? "" : "; (b) fsr > baseline")};
}

// 9. Reordering neighbour views permutes the outputs and changes nothing else.
Outcome permutation_invariance() {
  Checker chk;
  const auto base = small_bundle(30, 4);
  const std::size_t px = 12 * 36;
  const int perms[][4] = {{0, 2, 1, 3}, {0, 3, 2, 1}, {0, 1, 3, 2}, {0, 3, 1, 2}};
  double worst = 0.0;
  for (auto mode : {Aggregation::average, Aggregation::attention}) {
    for (bool fsr : {false, true}) {
      const auto c = tiny_config(mode, fsr);
      const auto params = random_params(c, 31);
      const mvr::Model<double> model(c, params);
      const auto ref = model.refine({base});
      const auto ref_v = ref.refined.values();
      double mode_worst = 0.0;
      for (const auto& p : perms) {
        mvr::ViewBundle b;
        for (int i : p) b.views.push_back(base.views[i]);
        const auto out = model.refine({b});
        const auto v = out.refined.values();
        for (int slot = 0; slot < 4; ++slot) {
          for (std::size_t i = 0; i < px; ++i) {
            mode_worst = std::max(mode_worst, std::abs(v[slot * px + i] - ref_v[p[slot] * px + i]));
          }
        }
      }
      chk.expect(mode_worst < kPermutationTol, std::string(mvr::to_string(mode)) + (fsr ? "+fsr" : "") + " max |d| " + fmt(mode_worst));
      worst = std::max(worst, mode_worst);
    }
  }
  chk.note("max |d| " + fmt(worst));
  return chk.outcome();
}

// 10. Geometric consistency loss on a flat ground plane.
Outcome gc_loss_fidelity() {
  Checker chk;
  const auto mesh = mvr::build_scene({3, 80.0, 0, 0, {}});
  const auto k = mvr::default_intrinsics().scaled(4);
  const auto r = mvr::render_location(mesh, mesh, mvr::trajectory_pose(0, 1), k, std::nullopt);
  mvr::ViewBundle b;
  std::vector<double> hq;
  for (const auto& v : r) {
    b.views.push_back(mvr::make_view_input(v.lq));
    hq.insert(hq.end(), v.hq_idepth.storage().begin(), v.hq_idepth.storage().end());
  }
  const ad::Shape shape{4, k.height, k.width, 1};
  const double clean = mvr::gc_loss(D::constant(shape, hq), {b}).item();
  chk.expect(clean < kGcConsistentMax, "clean gc_loss " + fmt(clean));
  double min_broken = std::numeric_limits<double>::infinity();
  const std::size_t px = static_cast<std::size_t>(k.height) * k.width;
  for (int view = 0; view < 4; ++view) {
    auto scaled = hq;
    for (std::size_t i = 0; i < px; ++i) scaled[view * px + i] *= 2.0;
    const double broken = mvr::gc_loss(D::constant(shape, scaled), {b}).item();
    min_broken = std::min(min_broken, broken);
    chk.expect(broken > kGcBrokenMin, "view " + std::to_string(view) + " x2 gc_loss " + fmt(broken));
  }
  chk.note("clean " + fmt(clean) + ", smallest x2 " + fmt(min_broken));
  return chk.outcome();
}

// 11. Metric identities over random cases.
Outcome metric_identities() {
  Checker chk;
  mvr::Rng rng(11);
  for (int i = 0; i < kMetricCases; ++i) {
    const std::size_t n = 1 + mvr::uniform_index(rng, 200);
    std::vector<float> hq(n), star(n), scaled(n);
    const double spread = mvr::uniform(rng, 0.0, 0.5);
    for (std::size_t j = 0; j < n; ++j) {
      hq[j] = static_cast<float>(mvr::uniform(rng, 0.01, 2.0));
      star[j] = mvr::uniform01(rng) < 0.05 ? 0.0f : static_cast<float>(hq[j] * std::exp(mvr::normal(rng, 0.0, spread)));
      scaled[j] = static_cast<float>(1.1 * hq[j]);
    }
    mvr::MetricsAccumulator acc;
    acc.add(star, hq);
    const auto rep = acc.report();
    for (std::size_t t = 1; t < rep.delta.size(); ++t) {
      chk.expect(rep.delta[t] >= rep.delta[t - 1], "case " + std::to_string(i) + ": delta not monotone");
    }
    chk.expect(rep.irmse >= rep.imae, "case " + std::to_string(i) + ": irmse " + fmt(rep.irmse) + " < imae " + fmt(rep.imae));
    mvr::MetricsAccumulator sacc;
    sacc.add(scaled, hq);
    const auto srep = sacc.report();
    chk.expect(srep.delta[0] == 0.0 && srep.delta[1] == 1.0,
               "case " + std::to_string(i) + ": 1.1x gives delta " + fmt(srep.delta[0]) + ", " + fmt(srep.delta[1]));
  }
  chk.note(std::to_string(kMetricCases) + " cases");
  return chk.outcome();
}

// 12. Interrupted and resumed training logs match the uninterrupted run byte for byte.
Outcome resume_determinism() {
  Checker chk;
  mvr::test::TempDir data_dir("accept_resume_data"), full("accept_full"), part("accept_part");
  mvr::generate_dataset(tiny_generate(), data_dir.path());
  const auto data = mvr::Dataset::open(data_dir.path());
  const auto model_cfg = tiny_config(Aggregation::attention, true);
  mvr::TrainConfig cfg;
  cfg.total_steps = 6;
  cfg.batch_locations = 2;
  cfg.seed = 4;
  cfg.validate_every = 2;
  cfg.checkpoint_every = 3;
  const auto a = mvr::train_loop(data, model_cfg, cfg, {full.path()});
  mvr::TrainOptions first{part.path()};
  first.stop_after = 3;
  mvr::train_loop(data, model_cfg, cfg, first);
  mvr::TrainOptions second{part.path()};
  second.resume = part.path() / "last.mvrf";
  const auto b = mvr::train_loop(data, model_cfg, cfg, second);
  chk.expect(a.log.size() == 6 && b.log.size() == 3, "unexpected log lengths");
  chk.expect(read_text(full.path() / "train.log") == read_text(part.path() / "train.log"), "train.log differs");
  chk.expect(read_text(full.path() / "val.log") == read_text(part.path() / "val.log"), "val.log differs");
  chk.expect(mvr::read_file(full.path() / "last.mvrf") == mvr::read_file(part.path() / "last.mvrf"), "last.mvrf differs");
  chk.note("6 steps, resumed at 3");
  return chk.outcome();
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: mvr_acceptance [--criterion N]\n";
      return 2;
    }
  }
  // Reference mode.
  ad::set_num_threads(1);

  const std::vector<Criterion> criteria{
      {1, "geometry and warp oracles", geometry_and_warp},
      {2, "occlusion soundness", occlusion_soundness},
      {3, "gradient correctness", gradient_correctness},
      {4, "architecture fidelity", architecture_fidelity},
      {5, "hyperparameter fidelity", hyperparameter_fidelity},
      {6, "identity start", identity_start},
      {7, "desk-scale learning", desk_scale_learning},
      {8, "directional reproduction", directional_reproduction},
      {9, "permutation invariance", permutation_invariance},
      {10, "gc loss fidelity", gc_loss_fidelity},
      {11, "metric identities", metric_identities},
      {12, "resume determinism", resume_determinism},
  };
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s  %2d  %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  if (ran == 0) {
    std::cerr << "no criterion " << only << "\n";
    return 2;
  }
  return failed ? 1 : 0;
}
