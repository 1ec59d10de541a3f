#pragma once

#include "mvr/geometry.hpp"
#include "mvr/image.hpp"

namespace mvr {

/// Per-pixel correspondence from a target view t into a source view n.
struct WarpField {
  Image<double> coords;         // 2 channels: (u, v) in the source image
  Image<double> reproj_idepth;  // inverse depth of the target pixel's point in the source frame
  Mask in_bounds;
  Mask front_of_camera;

  /// in_bounds && front_of_camera.
  Mask valid() const;
};

/// Backprojects `d_t` through `k`, moves the points by `n_from_t` and projects them again.
/// Pixels with d_t == 0 are background and never front_of_camera.
WarpField compute_warp(const ImageF& d_t, const CameraIntrinsics& k, const Se3Transform& n_from_t);

/// Bilinear lookup; neighbours outside the image contribute zero. Output is zero where !mask.
ImageF sample_bilinear(const ImageF& image, const Image<double>& coords, const Mask& mask);

/// Nearest-neighbour lookup (round half away from zero); zero where !mask or out of bounds.
IdImage sample_nearest(const IdImage& image, const Image<double>& coords, const Mask& mask);

struct WarpedImage {
  ImageF image;
  Mask mask;
};
/// Source image `source_n` resampled into the target view.
WarpedImage warp_image(const ImageF& source_n, const ImageF& d_t, const CameraIntrinsics& k,
                       const Se3Transform& n_from_t);

struct WarpedInverseDepth {
  ImageF sampled;      // d_n looked up at the warped coordinates
  ImageF reprojected;  // d_t's points expressed as inverse depth in frame n
  Mask mask;
};
WarpedInverseDepth warp_inverse_depth(const ImageF& d_n, const ImageF& d_t, const CameraIntrinsics& k,
                                      const Se3Transform& n_from_t);

/// True where the same triangle is visible from both views.
Mask occlusion_mask(const IdImage& tri_t, const IdImage& tri_n, const ImageF& d_t, const CameraIntrinsics& k,
                    const Se3Transform& n_from_t);
/// Same test against a precomputed field.
Mask occlusion_mask(const IdImage& tri_t, const IdImage& tri_n, const WarpField& field);

/// Mean of the nonzero inverse depths in each s x s cell (0 when a cell has none).
ImageF downsample_inverse_depth(const ImageF& d, int s);
/// A coarse pixel is set when at least half of the fine pixels it covers are set.
Mask downsample_mask(const Mask& m, int s);

}  // namespace mvr
