#include "mvr/net.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mvr/rng.hpp"
#include "mvr/warp.hpp"

namespace mvr {

using ad::Shape;
using ad::Tensor;

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::none: return "none";
    case Aggregation::average: return "average";
    case Aggregation::attention: return "attention";
  }
  return "none";
}

Aggregation aggregation_from_string(std::string_view name) {
  if (name == "none") return Aggregation::none;
  if (name == "average") return Aggregation::average;
  if (name == "attention") return Aggregation::attention;
  throw std::invalid_argument("unknown aggregation mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("ModelConfig: input_channels must be positive");
  if (base_width < 1) throw std::invalid_argument("ModelConfig: base_width must be positive");
  if (fsr_dim < 1 || fsr_hidden < 1 || fsr_layers < 1) throw std::invalid_argument("ModelConfig: bad FSR sizes");
}

int norm_groups(int channels) { return std::gcd(channels, 8); }

namespace {

constexpr int kAttentionWidth = 32;

int level_width(const ModelConfig& c, int level) {
  return level < kAggregatedLevels - 1 ? c.base_width << level : c.base_width * 16;
}

enum class Kind { conv_weight, dense_weight, output_weight, gamma, beta, bias, fsr_bias };

struct ParamSpec {
  std::string name;
  Shape shape;
  Kind kind;
};

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  std::vector<ParamSpec> out;
  auto conv = [&](const std::string& name, int k, int cin, int cout) {
    out.push_back({name + ".w", {k, k, cin, cout}, Kind::conv_weight});
  };
  auto norm = [&](const std::string& name, int ch) {
    out.push_back({name + ".gamma", {ch}, Kind::gamma});
    out.push_back({name + ".beta", {ch}, Kind::beta});
  };
  auto projection = [&](const std::string& name, int k, int cin, int cout) {
    conv(name + ".conv1", k, cin, cout);
    norm(name + ".gn1", cout);
    conv(name + ".conv2", 3, cout, cout);
    norm(name + ".gn2", cout);
    conv(name + ".short", 1, cin, cout);
    norm(name + ".gns", cout);
  };
  auto residual = [&](const std::string& name, int ch) {
    conv(name + ".conv1", 3, ch, ch);
    norm(name + ".gn1", ch);
    conv(name + ".conv2", 3, ch, ch);
    norm(name + ".gn2", ch);
  };
  const int w = c.base_width;
  projection("stem", 7, c.input_channels, w);
  residual("enc0.res0", w);
  const int residuals[] = {2, 2, 2, 5};
  for (int l = 1; l < kAggregatedLevels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    projection(name + ".proj", 3, level_width(c, l - 1), level_width(c, l));
    for (int r = 0; r < residuals[l - 1]; ++r) residual(name + ".res" + std::to_string(r), level_width(c, l));
  }
  int in = level_width(c, kAggregatedLevels - 1);
  for (int l = kAggregatedLevels - 2; l >= 0; --l) {
    const int up = 2 * level_width(c, l);
    const std::string name = "dec" + std::to_string(l) + ".up";
    conv(name + ".conv", 3, in, 4 * up);
    norm(name + ".gn", up);
    in = up + level_width(c, l);
  }
  residual("head.res0", in);
  residual("head.res1", in);
  out.push_back({"head.out.w", {3, 3, in, 1}, Kind::output_weight});
  out.push_back({"head.out.b", {1}, Kind::bias});

  if (c.aggregation == Aggregation::attention) {
    for (int l = 0; l < kAggregatedLevels; ++l) {
      const std::string name = "att" + std::to_string(l);
      const int widths[] = {2 * level_width(c, l), kAttentionWidth, kAttentionWidth, 1};
      for (int i = 0; i < 3; ++i) {
        conv(name + ".conv" + std::to_string(i + 1), 3, widths[i], widths[i + 1]);
        out.push_back({name + ".conv" + std::to_string(i + 1) + ".b", {widths[i + 1]}, Kind::bias});
      }
    }
  }
  if (c.aggregation != Aggregation::none && c.feature_transform) {
    int fan = 12;
    for (int i = 0; i < c.fsr_layers; ++i) {
      out.push_back({"fsr.mlp" + std::to_string(i) + ".w", {fan, c.fsr_hidden}, Kind::dense_weight});
      out.push_back({"fsr.mlp" + std::to_string(i) + ".b", {c.fsr_hidden}, Kind::bias});
      fan = c.fsr_hidden;
    }
    const int d = c.fsr_dim;
    out.push_back({"fsr.mlp" + std::to_string(c.fsr_layers) + ".w", {fan, d * (d + 4)}, Kind::output_weight});
    out.push_back({"fsr.mlp" + std::to_string(c.fsr_layers) + ".b", {d * (d + 4)}, Kind::fsr_bias});
    for (int l = 0; l < kAggregatedLevels; ++l) {
      out.push_back({"fsr.in" + std::to_string(l) + ".w", {1, 1, level_width(c, l), d}, Kind::dense_weight});
      out.push_back({"fsr.out" + std::to_string(l) + ".w", {1, 1, d, level_width(c, l)}, Kind::dense_weight});
    }
  }
  return out;
}

// Fan-in of a weight: every extent except the last.
std::size_t fan_in(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Shape shape, std::vector<T> values, bool regularized) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back({name, Tensor<T>::parameter(std::move(shape), std::move(values)), regularized});
  return entries_.back().tensor;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParameterSet<T>::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return entries_[it->second].tensor;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::frozen() const {
  ParameterSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.index_[e.name] = out.entries_.size();
    out.entries_.push_back({e.name, e.tensor.detach(), e.regularized});
  }
  return out;
}

template <typename T>
template <typename U>
ParameterSet<U> ParameterSet<T>::cast() const {
  ParameterSet<U> out;
  for (const auto& e : entries_) {
    std::vector<U> v(e.tensor.values().begin(), e.tensor.values().end());
    out.add(e.name, e.tensor.shape(), std::move(v), e.regularized);
  }
  return out;
}

template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterSet<T> out;
  const int d = config.fsr_dim;
  for (const auto& spec : parameter_layout(config)) {
    std::vector<T> v(ad::numel(spec.shape), T(0));
    bool regularized = false;
    switch (spec.kind) {
      case Kind::conv_weight: {
        const double std = std::sqrt(2.0 / static_cast<double>(fan_in(spec.shape)));
        for (auto& x : v) x = static_cast<T>(normal(rng, 0.0, std));
        regularized = true;
        break;
      }
      case Kind::dense_weight: {
        // Linear layers feeding ELU keep the He gain; projections are linear, so unit gain.
        const bool linear = spec.name.rfind("fsr.in", 0) == 0 || spec.name.rfind("fsr.out", 0) == 0;
        const double std = std::sqrt((linear ? 1.0 : 2.0) / static_cast<double>(fan_in(spec.shape)));
        for (auto& x : v) x = static_cast<T>(normal(rng, 0.0, std));
        regularized = true;
        break;
      }
      case Kind::output_weight:
        if (spec.name.rfind("fsr.", 0) == 0) {
          const double std = std::sqrt(1.0 / static_cast<double>(fan_in(spec.shape)));
          for (auto& x : v) x = static_cast<T>(normal(rng, 0.0, std));
        }
        regularized = true;
        break;
      case Kind::gamma:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case Kind::beta:
      case Kind::bias:
        break;
      case Kind::fsr_bias:
        for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i) * (d + 4) + i] = T(1);
        break;
    }
    out.add(spec.name, spec.shape, std::move(v), regularized);
  }
  return out;
}

NormalizedPlane normalize_input(const ImageF& d_lq) {
  if (d_lq.empty()) throw std::invalid_argument("normalize_input: empty plane");
  double sum = 0.0;
  std::size_t n = 0;
  for (float v : d_lq.storage()) {
    if (v > 0.0f) {
      sum += v;
      ++n;
    }
  }
  NormalizedPlane out{ImageF(d_lq.height(), d_lq.width()), 0.0f, kSigmaFloor};
  if (n == 0) return out;
  const double mu = sum / static_cast<double>(n);
  double var = 0.0;
  for (float v : d_lq.storage()) {
    if (v > 0.0f) var += (v - mu) * (v - mu);
  }
  const double sigma = std::max(std::sqrt(var / static_cast<double>(n)), static_cast<double>(kSigmaFloor));
  out.mu = static_cast<float>(mu);
  out.sigma = static_cast<float>(sigma);
  for (std::size_t i = 0; i < d_lq.size(); ++i) {
    const float v = d_lq.data()[i];
    if (v > 0.0f) out.plane.data()[i] = static_cast<float>((v - mu) / sigma);
  }
  return out;
}

ViewInput make_view_input(const RenderedView& view) {
  const int h = view.idepth.height();
  const int w = view.idepth.width();
  NormalizedPlane n = normalize_input(view.idepth);
  ViewInput out;
  out.features = ImageF(h, w, 8);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      float* f = &out.features(r, c, 0);
      f[0] = n.plane(r, c);
      for (int k = 0; k < 3; ++k) f[1 + k] = view.color(r, c, k);
      for (int k = 0; k < 3; ++k) f[4 + k] = view.normals(r, c, k);
      f[7] = view.area(r, c);
    }
  }
  out.idepth_lq = view.idepth;
  out.intrinsics = view.intrinsics;
  out.pose = view.pose;
  out.tri_id = view.tri_id;
  out.mu = n.mu;
  out.sigma = n.sigma;
  return out;
}

void ViewBundle::validate() const {
  if (views.empty()) throw std::invalid_argument("ViewBundle: no views");
  const auto& k = views[0].intrinsics;
  for (const auto& v : views) {
    if (!(v.intrinsics == k)) throw std::invalid_argument("ViewBundle: views must share intrinsics");
    if (v.idepth_lq.height() != k.height || v.idepth_lq.width() != k.width ||
        v.features.height() != k.height || v.features.width() != k.width || v.tri_id.height() != k.height ||
        v.tri_id.width() != k.width) {
      throw std::invalid_argument("ViewBundle: plane extents do not match intrinsics");
    }
    if (v.features.channels() != views[0].features.channels()) {
      throw std::invalid_argument("ViewBundle: views must share the channel count");
    }
  }
}

BatchGeometry batch_geometry(const std::vector<ViewBundle>& bundles) {
  if (bundles.empty()) throw std::invalid_argument("batch_geometry: no bundles");
  BatchGeometry g;
  g.views_per_bundle = static_cast<int>(bundles[0].views.size());
  const CameraIntrinsics k = bundles[0].views[0].intrinsics;
  for (const auto& b : bundles) {
    b.validate();
    if (static_cast<int>(b.views.size()) != g.views_per_bundle || !(b.views[0].intrinsics == k)) {
      throw std::invalid_argument("batch_geometry: bundles must share view count and intrinsics");
    }
  }
  const int v = g.views_per_bundle;
  for (int l = 0; l < kAggregatedLevels; ++l) {
    const CameraIntrinsics ks = k.scaled(level_scale(l));
    g.levels[l].height = ks.height;
    g.levels[l].width = ks.width;
  }
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& views = bundles[b].views;
    for (int t = 0; t < v; ++t) {
      for (int n = 0; n < v; ++n) {
        if (n == t) continue;
        const Se3Transform n_from_t = relative(views[n].pose, views[t].pose);
        g.pairs.push_back({static_cast<int>(b) * v + t, static_cast<int>(b) * v + n, invert(n_from_t)});
        const WarpField fine = compute_warp(views[t].idepth_lq, k, n_from_t);
        const Mask occlusion = occlusion_mask(views[t].tri_id, views[n].tri_id, fine);
        for (int l = 0; l < kAggregatedLevels; ++l) {
          const int s = level_scale(l);
          const CameraIntrinsics ks = k.scaled(s);
          const ImageF d = downsample_inverse_depth(views[t].idepth_lq, s);
          const WarpField field = l == 0 ? fine : compute_warp(d, ks, n_from_t);
          const Mask occ = downsample_mask(occlusion, s);
          LevelGeometry& lg = g.levels[l];
          const Eigen::Matrix3d& rot = n_from_t.rotation();
          const Eigen::Vector3d& tr = n_from_t.translation();
          for (int r = 0; r < ks.height; ++r) {
            for (int c = 0; c < ks.width; ++c) {
              const bool ok = field.in_bounds(r, c) && field.front_of_camera(r, c) && occ(r, c);
              lg.mask.push_back(ok ? 1 : 0);
              if (!ok) {
                lg.coords.insert(lg.coords.end(), {-1.0f, -1.0f});
                lg.xyzw.insert(lg.xyzw.end(), {0.0f, 0.0f, 0.0f, 0.0f});
                continue;
              }
              lg.coords.push_back(static_cast<float>(field.coords(r, c, 0)));
              lg.coords.push_back(static_cast<float>(field.coords(r, c, 1)));
              const double dd = d(r, c);
              const Eigen::Vector3d x = rot * Eigen::Vector3d((c - ks.cx) / ks.fx, (r - ks.cy) / ks.fy, 1.0) + dd * tr;
              lg.xyzw.insert(lg.xyzw.end(), {static_cast<float>(x.x()), static_cast<float>(x.y()),
                                             static_cast<float>(x.z()), static_cast<float>(dd)});
            }
          }
        }
      }
    }
  }
  return g;
}

const std::vector<LayerShape>& reference_layer_shapes() {
  static const std::vector<LayerShape> rows{
      {"Input", {96, 288, 8}},
      {"Projection", {96, 288, 16}},
      {"Residual", {96, 288, 16}},
      {"Projection, Residual x2", {48, 144, 32}},
      {"Projection, Residual x2", {24, 72, 64}},
      {"Projection, Residual x2", {12, 36, 128}},
      {"Projection, Residual x5", {6, 18, 256}},
      {"Up-projection, Skip", {12, 36, 384}},
      {"Up-projection, Skip", {24, 72, 192}},
      {"Up-projection, Skip", {48, 144, 96}},
      {"Up-projection, Skip", {96, 288, 48}},
      {"Residual x2", {96, 288, 48}},
      {"Convolution", {96, 288, 1}},
  };
  return rows;
}

template <typename T>
Model<T>::Model(ModelConfig config, const ParameterSet<T>& params) : config_(config), params_(params) {
  config_.validate();
  for (const auto& spec : parameter_layout(config_)) {
    const Tensor<T>& t = params_[spec.name];
    if (t.shape() != spec.shape) {
      throw std::invalid_argument("parameter '" + spec.name + "' has shape " + ad::to_string(t.shape()) +
                                  ", expected " + ad::to_string(spec.shape));
    }
  }
  if (config_.base_width == 16 && config_.input_channels == 8) {
    // Static ladder check against the reference table.
    const auto& ref = reference_layer_shapes();
    int h = 96, w = 288;
    std::vector<Shape> ladder{{h, w, config_.input_channels}};
    for (int l = 0; l < kAggregatedLevels; ++l) {
      const int hl = (h + level_scale(l) - 1) / level_scale(l);
      const int wl = (w + level_scale(l) - 1) / level_scale(l);
      if (l == 0) ladder.push_back({hl, wl, level_width(config_, 0)});
      ladder.push_back({hl, wl, level_width(config_, l)});
    }
    int in = level_width(config_, kAggregatedLevels - 1);
    for (int l = kAggregatedLevels - 2; l >= 0; --l) {
      in = 2 * level_width(config_, l) + level_width(config_, l);
      ladder.push_back({ladder[l + 2][0], ladder[l + 2][1], in});
    }
    ladder.push_back({h, w, in});
    ladder.push_back({h, w, 1});
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (ladder[i] != ref[i].shape) throw std::logic_error("layer ladder deviates from the reference table");
    }
  }
}

template <typename T>
Tensor<T> Model<T>::conv(const Tensor<T>& x, const std::string& name, int stride) const {
  return ad::conv2d(x, p(name + ".w"), stride);
}

template <typename T>
Tensor<T> Model<T>::norm(const Tensor<T>& x, const std::string& name) const {
  return ad::group_norm(x, norm_groups(x.dim(-1)), p(name + ".gamma"), p(name + ".beta"));
}

template <typename T>
Tensor<T> Model<T>::projection_block(const Tensor<T>& x, const std::string& name, int stride) const {
  Tensor<T> y = ad::elu(norm(conv(x, name + ".conv1", stride), name + ".gn1"));
  y = norm(conv(y, name + ".conv2", 1), name + ".gn2");
  Tensor<T> s = norm(conv(x, name + ".short", stride), name + ".gns");
  return ad::elu(ad::add(y, s));
}

template <typename T>
Tensor<T> Model<T>::residual_block(const Tensor<T>& x, const std::string& name) const {
  Tensor<T> y = ad::elu(norm(conv(x, name + ".conv1", 1), name + ".gn1"));
  y = norm(conv(y, name + ".conv2", 1), name + ".gn2");
  return ad::elu(ad::add(x, y));
}

template <typename T>
Tensor<T> Model<T>::up_projection(const Tensor<T>& x, const Tensor<T>& skip, const std::string& name) const {
  Tensor<T> y = ad::pixel_shuffle(conv(x, name + ".conv", 1), 2);
  // Odd skip extents leave one surplus row or column after upsampling.
  if (y.dim(1) != skip.dim(1)) y = ad::slice(y, 1, 0, skip.dim(1));
  if (y.dim(2) != skip.dim(2)) y = ad::slice(y, 2, 0, skip.dim(2));
  y = ad::elu(norm(y, name + ".gn"));
  return ad::concat<T>({y, skip}, 3);
}

namespace {

template <typename T>
void record(std::vector<LayerShape>* trace, const char* name, const Tensor<T>& t) {
  if (trace) trace->push_back({name, {t.dim(1), t.dim(2), t.dim(3)}});
}

}  // namespace

template <typename T>
EncoderOutput<T> Model<T>::encode(const Tensor<T>& x, std::vector<LayerShape>* trace) const {
  if (x.rank() != 4 || x.dim(3) != config_.input_channels) {
    throw std::invalid_argument("encode: expected N x H x W x " + std::to_string(config_.input_channels) +
                                " input, got " + ad::to_string(x.shape()));
  }
  EncoderOutput<T> out;
  record(trace, "Input", x);
  Tensor<T> y = projection_block(x, "stem", 1);
  record(trace, "Projection", y);
  y = residual_block(y, "enc0.res0");
  record(trace, "Residual", y);
  out.skips[0] = y;
  const int residuals[] = {2, 2, 2, 5};
  const char* rows[] = {"Projection, Residual x2", "Projection, Residual x2", "Projection, Residual x2",
                        "Projection, Residual x5"};
  for (int l = 1; l < kAggregatedLevels; ++l) {
    const std::string name = "enc" + std::to_string(l);
    y = projection_block(y, name + ".proj", 2);
    for (int r = 0; r < residuals[l - 1]; ++r) y = residual_block(y, name + ".res" + std::to_string(r));
    record(trace, rows[l - 1], y);
    if (l < kAggregatedLevels - 1) out.skips[l] = y;
  }
  out.bottleneck = y;
  return out;
}

template <typename T>
Tensor<T> Model<T>::decode(const EncoderOutput<T>& enc, std::vector<LayerShape>* trace) const {
  Tensor<T> y = enc.bottleneck;
  for (int l = kAggregatedLevels - 2; l >= 0; --l) {
    y = up_projection(y, enc.skips[l], "dec" + std::to_string(l) + ".up");
    record(trace, "Up-projection, Skip", y);
  }
  y = residual_block(residual_block(y, "head.res0"), "head.res1");
  record(trace, "Residual x2", y);
  y = ad::add(conv(y, "head.out", 1), p("head.out.b"));
  record(trace, "Convolution", y);
  return y;
}

template <typename T>
Tensor<T> Model<T>::fsr_generate(const std::vector<Se3Transform>& target_from_source) const {
  const int n = static_cast<int>(target_from_source.size());
  std::vector<T> in;
  in.reserve(static_cast<std::size_t>(n) * 12);
  for (const auto& t : target_from_source) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) in.push_back(static_cast<T>(t.rotation()(r, c)));
    }
    for (int r = 0; r < 3; ++r) in.push_back(static_cast<T>(t.translation()(r)));
  }
  Tensor<T> h = Tensor<T>::constant({n, 12}, std::move(in));
  for (int i = 0; i <= config_.fsr_layers; ++i) {
    const std::string name = "fsr.mlp" + std::to_string(i);
    h = ad::add(ad::matmul(h, p(name + ".w")), p(name + ".b"));
    if (i < config_.fsr_layers) h = ad::elu(h);
  }
  return ad::reshape(h, {n, config_.fsr_dim, config_.fsr_dim + 4});
}

template <typename T>
Tensor<T> Model<T>::fsr_apply(const Tensor<T>& warped, const Tensor<T>& xyzw, const Tensor<T>& w,
                              std::span<const std::uint8_t> mask, int level) const {
  const int n = warped.dim(0), h = warped.dim(1), wd = warped.dim(2);
  const int d = config_.fsr_dim;
  if (xyzw.shape() != Shape{n, h, wd, 4} || w.shape() != Shape{n, d, d + 4}) {
    throw std::invalid_argument("fsr_apply: shape mismatch");
  }
  Tensor<T> f = conv(warped, "fsr.in" + std::to_string(level), 1);
  f = ad::reshape(ad::concat<T>({f, xyzw}, 3), {n, h * wd, d + 4});
  f = ad::reshape(ad::batched_matmul(f, w, true), {n, h, wd, d});
  f = conv(f, "fsr.out" + std::to_string(level), 1);
  std::vector<T> m(mask.begin(), mask.end());
  return ad::mul(f, Tensor<T>::constant({n, h, wd, 1}, std::move(m)));
}

template <typename T>
Tensor<T> Model<T>::aggregate(const Tensor<T>& features, const BatchGeometry& geometry, int level,
                              const Tensor<T>& fsr_w) const {
  const int v = geometry.views_per_bundle;
  const int n = features.dim(0), h = features.dim(1), w = features.dim(2), c = features.dim(3);
  if (config_.aggregation == Aggregation::none || v <= 1) return features;
  const LevelGeometry& lg = geometry.levels[level];
  const int pairs = static_cast<int>(geometry.pairs.size());
  if (lg.height != h || lg.width != w || pairs != n * (v - 1)) {
    throw std::invalid_argument("aggregate: feature map " + ad::to_string(features.shape()) +
                                " does not match the batch geometry");
  }
  const std::size_t px = static_cast<std::size_t>(h) * w;

  std::vector<Tensor<T>> sources;
  sources.reserve(pairs);
  for (const auto& pg : geometry.pairs) sources.push_back(ad::slice(features, 0, pg.source, pg.source + 1));
  const Tensor<T> coords = Tensor<T>::constant({pairs, h, w, 2}, std::vector<T>(lg.coords.begin(), lg.coords.end()));
  Tensor<T> warped = ad::grid_sample(ad::concat(sources, 0), coords, lg.mask);
  if (config_.feature_transform) {
    const Tensor<T> xyzw = Tensor<T>::constant({pairs, h, w, 4}, std::vector<T>(lg.xyzw.begin(), lg.xyzw.end()));
    warped = fsr_apply(warped, xyzw, fsr_w, lg.mask, level);
  }

  // Candidates per target: itself first, then its warped neighbours in view order.
  std::vector<Tensor<T>> cand;
  std::vector<std::uint8_t> cand_mask;
  cand_mask.reserve(static_cast<std::size_t>(n) * v * px);
  for (int t = 0; t < n; ++t) {
    cand.push_back(ad::slice(features, 0, t, t + 1));
    cand.push_back(ad::slice(warped, 0, t * (v - 1), (t + 1) * (v - 1)));
    cand_mask.insert(cand_mask.end(), px, 1);
    cand_mask.insert(cand_mask.end(), lg.mask.begin() + t * (v - 1) * px, lg.mask.begin() + (t + 1) * (v - 1) * px);
  }
  const Tensor<T> candidates = ad::concat(cand, 0);

  if (config_.aggregation == Aggregation::average) {
    std::vector<T> inv(static_cast<std::size_t>(n) * px);
    for (int t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < px; ++i) {
        int count = 0;
        for (int k = 0; k < v; ++k) count += cand_mask[(static_cast<std::size_t>(t) * v + k) * px + i];
        inv[t * px + i] = T(1) / static_cast<T>(count);
      }
    }
    const Tensor<T> total = ad::sum(ad::reshape(candidates, {n, v, h, w, c}), 1);
    return ad::mul(total, Tensor<T>::constant({n, h, w, 1}, std::move(inv)));
  }

  std::vector<Tensor<T>> targets;
  for (int t = 0; t < n; ++t) {
    const Tensor<T> ft = ad::slice(features, 0, t, t + 1);
    for (int k = 0; k < v; ++k) targets.push_back(ft);
  }
  const std::string name = "att" + std::to_string(level);
  Tensor<T> s = ad::concat<T>({ad::concat(targets, 0), candidates}, 3);
  s = ad::elu(ad::add(conv(s, name + ".conv1", 1), p(name + ".conv1.b")));
  s = ad::elu(ad::add(conv(s, name + ".conv2", 1), p(name + ".conv2.b")));
  s = ad::add(conv(s, name + ".conv3", 1), p(name + ".conv3.b"));
  const Tensor<T> weights = ad::reshape(ad::softmax(ad::reshape(s, {n, v, h, w}), 1, cand_mask), {n * v, h, w, 1});
  return ad::sum(ad::reshape(ad::mul(weights, candidates), {n, v, h, w, c}), 1);
}

template <typename T>
Prediction<T> Model<T>::refine(const std::vector<ViewBundle>& bundles) const {
  return refine(bundles, batch_geometry(bundles));
}

template <typename T>
Prediction<T> Model<T>::refine(const std::vector<ViewBundle>& bundles, const BatchGeometry& geometry) const {
  if (bundles.empty()) throw std::invalid_argument("refine: no bundles");
  const ViewInput& first = bundles[0].views[0];
  const int h = first.intrinsics.height, w = first.intrinsics.width, f = config_.input_channels;
  std::vector<T> x, dlq, sigma;
  for (const auto& b : bundles) {
    b.validate();
    for (const auto& view : b.views) {
      if (view.features.channels() != f || view.intrinsics.height != h || view.intrinsics.width != w) {
        throw std::invalid_argument("refine: view does not match the model input");
      }
      x.insert(x.end(), view.features.storage().begin(), view.features.storage().end());
      dlq.insert(dlq.end(), view.idepth_lq.storage().begin(), view.idepth_lq.storage().end());
      sigma.push_back(static_cast<T>(view.sigma));
    }
  }
  const int n = static_cast<int>(sigma.size());
  EncoderOutput<T> enc = encode(Tensor<T>::constant({n, h, w, f}, std::move(x)));
  if (config_.aggregation != Aggregation::none && geometry.views_per_bundle > 1) {
    Tensor<T> fsr_w;
    if (config_.feature_transform) {
      std::vector<Se3Transform> poses;
      for (const auto& pg : geometry.pairs) poses.push_back(pg.target_from_source);
      fsr_w = fsr_generate(poses);
    }
    for (int l = 0; l < kAggregatedLevels - 1; ++l) enc.skips[l] = aggregate(enc.skips[l], geometry, l, fsr_w);
    enc.bottleneck = aggregate(enc.bottleneck, geometry, kAggregatedLevels - 1, fsr_w);
  }
  Prediction<T> out;
  out.error_raw = decode(enc);
  out.error = ad::mul(out.error_raw, Tensor<T>::constant({n, 1, 1, 1}, std::move(sigma)));
  out.refined = ad::clamp_min(ad::add(Tensor<T>::constant({n, h, w, 1}, std::move(dlq)), out.error), T(0));
  return out;
}

template <typename T>
std::vector<LayerShape> Model<T>::shape_trace(int height, int width) const {
  std::vector<LayerShape> trace;
  const Tensor<T> x = Tensor<T>::filled({1, height, width, config_.input_channels}, T(0));
  decode(encode(x, &trace), &trace);
  return trace;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template ParameterSet<double> ParameterSet<float>::cast<double>() const;
template ParameterSet<float> ParameterSet<double>::cast<float>() const;
template ParameterSet<float> ParameterSet<float>::cast<float>() const;
template ParameterSet<double> ParameterSet<double>::cast<double>() const;
template ParameterSet<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, std::uint64_t);
template class Model<float>;
template class Model<double>;

}  // namespace mvr
