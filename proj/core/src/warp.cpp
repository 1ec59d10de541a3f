#include "mvr/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mvr {

namespace {

void check_extent(const ImageF& d, const CameraIntrinsics& k, const char* what) {
  if (d.height() != k.height || d.width() != k.width || d.channels() != 1) {
    throw std::invalid_argument(std::string(what) + ": inverse-depth plane does not match intrinsics");
  }
}

}  // namespace

Mask WarpField::valid() const {
  Mask out(in_bounds.height(), in_bounds.width());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = in_bounds.data()[i] && front_of_camera.data()[i];
  return out;
}

WarpField compute_warp(const ImageF& d_t, const CameraIntrinsics& k, const Se3Transform& n_from_t) {
  check_extent(d_t, k, "compute_warp");
  const int h = k.height;
  const int w = k.width;
  WarpField f{Image<double>(h, w, 2), Image<double>(h, w, 1), Mask(h, w), Mask(h, w)};
  const Eigen::Matrix3d& r = n_from_t.rotation();
  const Eigen::Vector3d& t = n_from_t.translation();
  for (int row = 0; row < h; ++row) {
    const double y = (row - k.cy) / k.fy;
    for (int col = 0; col < w; ++col) {
      const double d = d_t(row, col);
      if (!(d > 0.0)) continue;
      const Eigen::Vector3d a = r * Eigen::Vector3d((col - k.cx) / k.fx, y, 1.0) + d * t;
      if (!(a.z() > 0.0)) continue;
      const double u = k.fx * a.x() / a.z() + k.cx;
      const double v = k.fy * a.y() / a.z() + k.cy;
      f.coords(row, col, 0) = u;
      f.coords(row, col, 1) = v;
      f.reproj_idepth(row, col) = d / a.z();
      f.front_of_camera(row, col) = 1;
      f.in_bounds(row, col) = u >= 0.0 && u <= w - 1 && v >= 0.0 && v <= h - 1;
    }
  }
  return f;
}

ImageF sample_bilinear(const ImageF& image, const Image<double>& coords, const Mask& mask) {
  const int h = coords.height();
  const int w = coords.width();
  const int ch = image.channels();
  const int sh = image.height();
  const int sw = image.width();
  ImageF out(h, w, ch);
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!mask(row, col)) continue;
      const double u = coords(row, col, 0);
      const double v = coords(row, col, 1);
      const double fu = std::floor(u);
      const double fv = std::floor(v);
      const double a = u - fu;
      const double b = v - fv;
      const int u0 = static_cast<int>(fu);
      const int v0 = static_cast<int>(fv);
      const double wts[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
      const int us[4] = {u0, u0 + 1, u0, u0 + 1};
      const int vs[4] = {v0, v0, v0 + 1, v0 + 1};
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) {
          if (wts[j] == 0.0 || us[j] < 0 || us[j] >= sw || vs[j] < 0 || vs[j] >= sh) continue;
          acc += wts[j] * image(vs[j], us[j], c);
        }
        out(row, col, c) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

IdImage sample_nearest(const IdImage& image, const Image<double>& coords, const Mask& mask) {
  const int h = coords.height();
  const int w = coords.width();
  IdImage out(h, w);
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      if (!mask(row, col)) continue;
      const double u = std::round(coords(row, col, 0));
      const double v = std::round(coords(row, col, 1));
      if (!(u >= 0 && u < image.width() && v >= 0 && v < image.height())) continue;
      out(row, col) = image(static_cast<int>(v), static_cast<int>(u));
    }
  }
  return out;
}

WarpedImage warp_image(const ImageF& source_n, const ImageF& d_t, const CameraIntrinsics& k,
                       const Se3Transform& n_from_t) {
  const WarpField f = compute_warp(d_t, k, n_from_t);
  Mask m = f.valid();
  ImageF img = sample_bilinear(source_n, f.coords, m);
  return {std::move(img), std::move(m)};
}

WarpedInverseDepth warp_inverse_depth(const ImageF& d_n, const ImageF& d_t, const CameraIntrinsics& k,
                                      const Se3Transform& n_from_t) {
  check_extent(d_n, k, "warp_inverse_depth");
  const WarpField f = compute_warp(d_t, k, n_from_t);
  Mask m = f.valid();
  WarpedInverseDepth out{sample_bilinear(d_n, f.coords, m), ImageF(k.height, k.width), std::move(m)};
  for (std::size_t i = 0; i < out.reprojected.size(); ++i) {
    if (out.mask.data()[i]) out.reprojected.data()[i] = static_cast<float>(f.reproj_idepth.data()[i]);
  }
  return out;
}

Mask occlusion_mask(const IdImage& tri_t, const IdImage& tri_n, const WarpField& field) {
  const Mask valid = field.valid();
  const IdImage warped = sample_nearest(tri_n, field.coords, valid);
  Mask out(valid.height(), valid.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto id = tri_t.data()[i];
    out.data()[i] = valid.data()[i] && id != 0 && warped.data()[i] == id;
  }
  return out;
}

Mask occlusion_mask(const IdImage& tri_t, const IdImage& tri_n, const ImageF& d_t, const CameraIntrinsics& k,
                    const Se3Transform& n_from_t) {
  if (tri_t.height() != k.height || tri_t.width() != k.width) {
    throw std::invalid_argument("occlusion_mask: triangle-ID plane does not match intrinsics");
  }
  return occlusion_mask(tri_t, tri_n, compute_warp(d_t, k, n_from_t));
}

ImageF downsample_inverse_depth(const ImageF& d, int s) {
  if (s < 1) throw std::invalid_argument("downsample_inverse_depth: factor must be >= 1");
  if (s == 1) return d;
  const int h = (d.height() + s - 1) / s;
  const int w = (d.width() + s - 1) / s;
  ImageF out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double sum = 0.0;
      int n = 0;
      for (int fr = r * s; fr < std::min((r + 1) * s, d.height()); ++fr) {
        for (int fc = c * s; fc < std::min((c + 1) * s, d.width()); ++fc) {
          const float v = d(fr, fc);
          if (v > 0.0f) {
            sum += v;
            ++n;
          }
        }
      }
      out(r, c) = n > 0 ? static_cast<float>(sum / n) : 0.0f;
    }
  }
  return out;
}

Mask downsample_mask(const Mask& m, int s) {
  if (s < 1) throw std::invalid_argument("downsample_mask: factor must be >= 1");
  if (s == 1) return m;
  const int h = (m.height() + s - 1) / s;
  const int w = (m.width() + s - 1) / s;
  Mask out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int set = 0;
      int covered = 0;
      for (int fr = r * s; fr < std::min((r + 1) * s, m.height()); ++fr) {
        for (int fc = c * s; fc < std::min((c + 1) * s, m.width()); ++fc) {
          ++covered;
          set += m(fr, fc) ? 1 : 0;
        }
      }
      out(r, c) = 2 * set >= covered ? 1 : 0;
    }
  }
  return out;
}

}  // namespace mvr
