#pragma once

// Minimal reverse-mode differentiation over dense NHWC tensors.
//
// A Tensor is a handle to a graph node. Ops create new nodes that remember their inputs and a
// backward rule; the graph lives exactly as long as some handle refers to it. Nodes whose inputs
// carry no gradient are recorded as constants, so inference builds no graph at all.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mvr/geometry.hpp"

namespace mvr::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // reads `grad`, accumulates into inputs
  const char* op = "leaf";

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor filled(Shape shape, T value);
  /// Leaf that receives a gradient.
  static Tensor parameter(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return constant({}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  /// Negative axes count from the back.
  int dim(int axis) const;
  std::size_t size() const { return node_->value.size(); }
  std::span<const T> values() const { return node_->value; }
  /// Leaf values; used by optimizers and initializers.
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Same values, cut from the graph.
  Tensor detach() const { return constant(shape(), node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Gradients of a scalar loss, keyed by leaf parameter.
template <typename T>
class Gradients {
 public:
  /// Gradient for `param`; zeros when the loss does not depend on it.
  std::vector<T> of(const Tensor<T>& param) const;
  bool reached(const Tensor<T>& param) const { return grads_.count(param.node()) != 0; }
  void insert(const Node<T>* node, std::vector<T> grad) { grads_[node] = std::move(grad); }

 private:
  std::unordered_map<const Node<T>*, std::vector<T>> grads_;
};

/// Reverse-mode sweep from a scalar loss. Throws std::invalid_argument for non-scalar losses.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

// Elementwise binary ops with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);

/// Elementwise f with derivative df, both evaluated at the input value.
template <typename T>
Tensor<T> unary(const Tensor<T>& x, std::function<T(T)> f, std::function<T(T)> df, const char* name = "unary");

template <typename T> Tensor<T> elu(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
/// max(x, floor); the clipped branch has zero subgradient.
template <typename T> Tensor<T> clamp_min(const Tensor<T>& x, T floor);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, int begin, int end);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);  // rank 2

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Sum along one axis, which is removed from the shape.
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis);
/// Sum of x over entries where mask != 0 (mask has x's element count). Returns a scalar.
template <typename T> Tensor<T> masked_sum(const Tensor<T>& x, std::span<const std::uint8_t> mask);
/// masked_sum / count; 0 when the mask is empty.
template <typename T> Tensor<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> mask);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a: B x M x K times b: B x K x N (or B x N x K with trans_b) -> B x M x N.
template <typename T> Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false);

/// Cross-correlation, zero "same" padding. x: N x H x W x Cin, filters: kh x kw x Cin x Cout.
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& filters, int stride);

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// N x H x W x (C*r*r) -> N x rH x rW x C; input channel c*r*r + i*r + j lands at offset (i, j).
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);

/// Bilinear sampling of x (N x H x W x C) at coords (N x H' x W' x 2, (u, v) pixels).
/// Differentiable in both x and coords; zero value and gradient where mask (N x H' x W') is 0.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& x, const Tensor<T>& coords, std::span<const std::uint8_t> mask);

/// Softmax along `axis`. Entries with mask == 0 get weight 0 and do not enter the normalizer.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, std::span<const std::uint8_t> mask = {});

template <typename T>
struct WarpCoordinates {
  Tensor<T> coords;                   // N x H x W x 2
  Tensor<T> reproj_idepth;            // N x H x W x 1
  std::vector<std::uint8_t> front;    // d > 0 and z > 0
  std::vector<std::uint8_t> in_bounds;
};

/// Differentiable reprojection of inverse-depth planes d (N x H x W x 1): per batch entry b,
/// pixels are backprojected with `k`, moved by `n_from_t[b]` and projected. Invalid pixels get
/// coords (-1, -1), reprojected inverse depth 0 and zero gradient.
template <typename T>
WarpCoordinates<T> warp_coordinates(const Tensor<T>& d, const CameraIntrinsics& k,
                                    const std::vector<Se3Transform>& n_from_t);

/// Number of worker threads used inside ops. Results never depend on it.
void set_num_threads(int n);
int num_threads();

}  // namespace mvr::ad
