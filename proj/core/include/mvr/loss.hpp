#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvr/autodiff.hpp"
#include "mvr/net.hpp"

namespace mvr {

struct LossWeights {
  double data = 1.0;
  double grad = 0.1;
  double gc = 0.1;
  double reg = 1e-6;

  void validate() const;
};

/// Fraction of the largest valid residual where berHu switches from L1 to L2.
inline constexpr double kBerhuThreshold = 0.2;

/// Mean berHu penalty over mask != 0. The threshold is a constant of the batch.
/// Zero when the mask is empty.
template <typename T>
ad::Tensor<T> berhu(const ad::Tensor<T>& residual, std::span<const std::uint8_t> mask);

/// Pixels whose full 3 x 3 neighbourhood lies inside the image and inside `valid`.
std::vector<std::uint8_t> sobel_support(std::span<const std::uint8_t> valid, int n, int h, int w);

/// Mean over supported pixels of (|Sobel_x(pred - label)| + |Sobel_y(pred - label)|) / 2. Planes are N x H x W x 1.
template <typename T>
ad::Tensor<T> grad_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& label, std::span<const std::uint8_t> valid);

enum class GcDrive : std::uint8_t { predicted, input };

/// Mean |sampled - reprojected| over the unoccluded pixels of every ordered view pair in each
/// bundle. `d_star` is stacked bundle-major like Model::refine.
template <typename T>
ad::Tensor<T> gc_loss(const ad::Tensor<T>& d_star, const std::vector<ViewBundle>& bundles,
                      GcDrive drive = GcDrive::predicted);

/// Sum of squared regularized weights.
template <typename T>
ad::Tensor<T> reg_loss(const ParameterSet<T>& params);

template <typename T>
struct LossTerms {
  ad::Tensor<T> data;
  ad::Tensor<T> grad;
  ad::Tensor<T> gc;
  ad::Tensor<T> reg;
  ad::Tensor<T> total;
};

template <typename T>
ad::Tensor<T> total_loss(const ad::Tensor<T>& data, const ad::Tensor<T>& grad, const ad::Tensor<T>& gc,
                         const ad::Tensor<T>& reg, const LossWeights& w);

/// Labels g = d_hq - d_lq and the valid set where both planes have geometry.
struct Labels {
  std::vector<float> g;
  std::vector<std::uint8_t> valid;
};
Labels make_labels(std::span<const float> d_hq, std::span<const float> d_lq);

/// All four terms for one batch.
template <typename T>
LossTerms<T> compute_losses(const Prediction<T>& pred, const std::vector<ViewBundle>& bundles, const Labels& labels,
                            const ParameterSet<T>& params, const LossWeights& w, GcDrive drive = GcDrive::predicted);

}  // namespace mvr
