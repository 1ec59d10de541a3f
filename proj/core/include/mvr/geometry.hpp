#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <stdexcept>

namespace mvr {

/// Thrown by project() for points at or behind the image plane.
class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Pinhole intrinsics. Pixel (0,0) is the center of the top-left pixel.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Intrinsics for a pyramid level downsampled by `s`, keeping pixel centers aligned.
  /// Image extents round up so that partial border cells survive.
  CameraIntrinsics scaled(int s) const;

  Eigen::Matrix3d matrix() const;
  void validate() const;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

/// Rigid transform x' = R x + t.
class Se3Transform {
 public:
  Se3Transform() = default;
  Se3Transform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static Se3Transform identity() { return {}; }
  /// Rotation from intrinsic Z-Y-X Euler angles (yaw, pitch, roll), radians.
  static Se3Transform from_euler(double yaw, double pitch, double roll, const Eigen::Vector3d& t);
  static Se3Transform from_matrix(const Eigen::Matrix4d& m);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  /// Checks orthonormality and det = +1 to `tol`.
  bool is_valid(double tol = 1e-9) const;

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Homogeneous point (x, y, z, w). Backprojected pixels carry z = 1 and w = inverse depth.
struct HomogeneousPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 1.0;
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

HomogeneousPoint backproject(const CameraIntrinsics& k, const Pixel& p, double inverse_depth);
HomogeneousPoint transform_point(const Se3Transform& t, const HomogeneousPoint& x);
Pixel project(const CameraIntrinsics& k, const HomogeneousPoint& x);
/// Non-throwing variant used in per-pixel loops; nullopt when z <= 0.
std::optional<Pixel> try_project(const CameraIntrinsics& k, const HomogeneousPoint& x);

Se3Transform compose(const Se3Transform& a, const Se3Transform& b);
Se3Transform invert(const Se3Transform& t);
/// Transform taking points in frame b to frame a, given world-from-a and world-from-b.
Se3Transform relative(const Se3Transform& world_from_a, const Se3Transform& world_from_b);

inline Se3Transform operator*(const Se3Transform& a, const Se3Transform& b) { return compose(a, b); }

}  // namespace mvr
