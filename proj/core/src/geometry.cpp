#include "mvr/geometry.hpp"

#include <cmath>
#include <string>

namespace mvr {

CameraIntrinsics CameraIntrinsics::scaled(int s) const {
  if (s < 1) throw std::invalid_argument("CameraIntrinsics::scaled: factor must be >= 1");
  if (s == 1) return *this;
  CameraIntrinsics out;
  const double inv = 1.0 / s;
  out.fx = fx * inv;
  out.fy = fy * inv;
  out.cx = (cx + 0.5) * inv - 0.5;
  out.cy = (cy + 0.5) * inv - 0.5;
  out.width = (width + s - 1) / s;
  out.height = (height + s - 1) / s;
  return out;
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width < 1 || height < 1 || !std::isfinite(cx) ||
      !std::isfinite(cy)) {
    throw std::invalid_argument("CameraIntrinsics: invalid parameters");
  }
}

Se3Transform::Se3Transform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {}

Se3Transform Se3Transform::from_euler(double yaw, double pitch, double roll,
                                      const Eigen::Vector3d& t) {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  return {r, t};
}

Se3Transform Se3Transform::from_matrix(const Eigen::Matrix4d& m) {
  Se3Transform t(m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>());
  if (!t.is_valid(1e-6)) throw std::invalid_argument("Se3Transform: matrix is not a rigid transform");
  return t;
}

Eigen::Matrix4d Se3Transform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

bool Se3Transform::is_valid(double tol) const {
  const double ortho = (rotation_.transpose() * rotation_ - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol && translation_.allFinite();
}

HomogeneousPoint backproject(const CameraIntrinsics& k, const Pixel& p, double inverse_depth) {
  if (!std::isfinite(p.u) || !std::isfinite(p.v) || !std::isfinite(inverse_depth)) {
    throw std::invalid_argument("backproject: non-finite input");
  }
  if (inverse_depth < 0.0) throw std::invalid_argument("backproject: negative inverse depth");
  return {(p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0, inverse_depth};
}

HomogeneousPoint transform_point(const Se3Transform& t, const HomogeneousPoint& x) {
  const Eigen::Vector3d xyz = t.rotation() * Eigen::Vector3d(x.x, x.y, x.z) + x.w * t.translation();
  return {xyz.x(), xyz.y(), xyz.z(), x.w};
}

std::optional<Pixel> try_project(const CameraIntrinsics& k, const HomogeneousPoint& x) {
  if (!(x.z > 0.0)) return std::nullopt;
  return Pixel{k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy};
}

Pixel project(const CameraIntrinsics& k, const HomogeneousPoint& x) {
  if (auto p = try_project(k, x)) return *p;
  throw BehindCameraError("project: point is not in front of the camera (z = " + std::to_string(x.z) + ")");
}

Se3Transform compose(const Se3Transform& a, const Se3Transform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

Se3Transform invert(const Se3Transform& t) {
  const Eigen::Matrix3d rt = t.rotation().transpose();
  return {rt, -(rt * t.translation())};
}

Se3Transform relative(const Se3Transform& world_from_a, const Se3Transform& world_from_b) {
  return compose(invert(world_from_a), world_from_b);
}

}  // namespace mvr
