#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvr/autodiff.hpp"
#include "mvr/geometry.hpp"
#include "mvr/image.hpp"
#include "mvr/scene.hpp"

namespace mvr {

enum class Aggregation : std::uint8_t { none, average, attention };
std::string_view to_string(Aggregation a);
Aggregation aggregation_from_string(std::string_view name);

/// Number of pyramid levels that get aggregated: 4 skips and the bottleneck.
inline constexpr int kAggregatedLevels = 5;

struct ModelConfig {
  int input_channels = 8;  // idepth, rgb, normals, area
  int base_width = 16;
  Aggregation aggregation = Aggregation::none;
  bool feature_transform = false;
  int fsr_dim = 32;
  int fsr_hidden = 128;
  int fsr_layers = 4;  // hidden layers of the filter-generating MLP

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors in creation order.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ad::Tensor<T> tensor;
    bool regularized = false;  // conv and MLP weights; excludes norm affine and biases
  };

  ad::Tensor<T>& add(std::string name, ad::Shape shape, std::vector<T> values, bool regularized);
  const ad::Tensor<T>& operator[](const std::string& name) const;
  ad::Tensor<T>& operator[](const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t scalar_count() const;

  /// Same values as graph constants; forward passes through them record nothing.
  ParameterSet frozen() const;
  template <typename U>
  ParameterSet<U> cast() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ModelParams = ParameterSet<float>;

/// He-style initialization; the output convolution starts at zero.
template <typename T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

struct NormalizedPlane {
  ImageF plane;
  float mu = 0.0f;
  float sigma = 1.0f;
};
inline constexpr float kSigmaFloor = 1e-6f;
/// Zero-mean, unit-deviation scaling over the valid (nonzero) pixels; invalid pixels stay 0.
NormalizedPlane normalize_input(const ImageF& d_lq);

/// One view as the network sees it.
struct ViewInput {
  ImageF features;  // H x W x input_channels, normalized idepth first
  ImageF idepth_lq;
  CameraIntrinsics intrinsics;
  Se3Transform pose;  // world-from-camera
  IdImage tri_id;
  float mu = 0.0f;
  float sigma = 1.0f;
};

ViewInput make_view_input(const RenderedView& view);

/// Views rendered around one location, refined jointly.
struct ViewBundle {
  std::vector<ViewInput> views;
  void validate() const;
};

/// Warps between every ordered view pair of each bundle, at every aggregated level.
/// Driven by the input inverse depth, so it carries no gradient.
struct PairGeometry {
  int target = 0;  // global view index within the batch
  int source = 0;
  Se3Transform target_from_source;
};

struct LevelGeometry {
  int height = 0;
  int width = 0;
  std::vector<float> coords;           // pairs x h x w x 2
  std::vector<float> xyzw;             // pairs x h x w x 4, homogeneous point in the source frame
  std::vector<std::uint8_t> mask;      // pairs x h x w: occlusion-free and valid
};

struct BatchGeometry {
  int views_per_bundle = 0;
  std::vector<PairGeometry> pairs;  // grouped by target, in view order
  std::array<LevelGeometry, kAggregatedLevels> levels;
};

/// Pyramid scale of aggregated level l (1, 2, 4, 8, 16).
inline constexpr int level_scale(int l) { return 1 << l; }

BatchGeometry batch_geometry(const std::vector<ViewBundle>& bundles);

struct LayerShape {
  std::string layer;
  ad::Shape shape;  // H, W, C
};

template <typename T>
struct EncoderOutput {
  std::array<ad::Tensor<T>, kAggregatedLevels - 1> skips;
  ad::Tensor<T> bottleneck;
};

template <typename T>
struct Prediction {
  ad::Tensor<T> error_raw;  // N x H x W x 1, normalized units
  ad::Tensor<T> error;      // sigma * error_raw
  ad::Tensor<T> refined;    // max(d_lq + error, 0)
};

template <typename T>
class Model {
 public:
  Model(ModelConfig config, const ParameterSet<T>& params);

  const ModelConfig& config() const { return config_; }

  EncoderOutput<T> encode(const ad::Tensor<T>& x, std::vector<LayerShape>* trace = nullptr) const;
  ad::Tensor<T> decode(const EncoderOutput<T>& enc, std::vector<LayerShape>* trace = nullptr) const;

  /// Per-pair D x (D + 4) matrices from flattened (rotation | translation) of target-from-source.
  ad::Tensor<T> fsr_generate(const std::vector<Se3Transform>& target_from_source) const;
  /// Down-project, append the homogeneous point, multiply by W, up-project; zero where masked.
  ad::Tensor<T> fsr_apply(const ad::Tensor<T>& warped, const ad::Tensor<T>& xyzw, const ad::Tensor<T>& w,
                          std::span<const std::uint8_t> mask, int level) const;
  /// Fuses each view's map with its warped neighbours. `features` is (bundles * V) x h x w x C.
  ad::Tensor<T> aggregate(const ad::Tensor<T>& features, const BatchGeometry& geometry, int level,
                          const ad::Tensor<T>& fsr_w) const;

  /// Joint refinement of whole bundles. Views are stacked bundle-major.
  Prediction<T> refine(const std::vector<ViewBundle>& bundles, const BatchGeometry& geometry) const;
  Prediction<T> refine(const std::vector<ViewBundle>& bundles) const;

  /// Layer output shapes of one forward pass at the given input size.
  std::vector<LayerShape> shape_trace(int height, int width) const;

 private:
  const ad::Tensor<T>& p(const std::string& name) const { return params_[name]; }
  ad::Tensor<T> conv(const ad::Tensor<T>& x, const std::string& name, int stride) const;
  ad::Tensor<T> norm(const ad::Tensor<T>& x, const std::string& name) const;
  ad::Tensor<T> projection_block(const ad::Tensor<T>& x, const std::string& name, int stride) const;
  ad::Tensor<T> residual_block(const ad::Tensor<T>& x, const std::string& name) const;
  ad::Tensor<T> up_projection(const ad::Tensor<T>& x, const ad::Tensor<T>& skip, const std::string& name) const;

  ModelConfig config_;
  ParameterSet<T> params_;
};

/// Layer output sizes of the reference architecture at 96 x 288 x 8 input: 13 rows of (H, W, C).
const std::vector<LayerShape>& reference_layer_shapes();

/// Group count used by every group norm layer.
int norm_groups(int channels);

}  // namespace mvr
