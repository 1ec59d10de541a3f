#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mvr/geometry.hpp"
#include "mvr/image.hpp"

namespace mvr {

/// Longest triangle edge produced by the tessellator (meters).
inline constexpr double kMaxTriangleEdge = 0.5;
/// Rendering near plane (meters); geometry closer than this is clipped.
inline constexpr double kNearPlane = 0.05;

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Eigen::Vector3f> albedo;  // one RGB per triangle, [0,1]

  std::size_t triangle_count() const { return triangles.size(); }
  double triangle_area(std::size_t i) const;
  /// Throws std::invalid_argument on out-of-range indices, albedo size mismatch or degenerate faces.
  void validate() const;
};

struct CorruptionSpec {
  double noise_sigma = 0.0;       // m, along vertex normals
  double hole_fraction = 0.0;     // [0, 1)
  double bulge_amplitude = 0.0;   // m
  double bulge_wavelength = 8.0;  // m

  void validate() const;
  bool is_identity() const { return noise_sigma == 0.0 && hole_fraction == 0.0 && bulge_amplitude == 0.0; }
};

struct SceneSpec {
  std::uint64_t rng_seed = 0;
  double extent = 80.0;  // side of the square ground plane centred on the origin (m)
  int n_boxes = 0;
  int n_walls = 0;
  CorruptionSpec corruption;

  void validate() const;
};

struct BoxPrimitive {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  Eigen::Vector3f albedo;
};

/// Vertical quad standing on the ground between `start` and `end`.
struct WallPrimitive {
  Eigen::Vector2d start;
  Eigen::Vector2d end;
  double height = 0.0;
  Eigen::Vector3f albedo;
};

/// The primitives a SceneSpec expands to, before tessellation.
struct SceneLayout {
  double extent = 0.0;
  Eigen::Vector3f ground_albedo;
  std::vector<BoxPrimitive> boxes;
  std::vector<WallPrimitive> walls;
};

/// Cells per side used when tessellating a rectangle side of `length` meters.
int tessellation_cells(double length);

SceneLayout scene_layout(const SceneSpec& spec);
TriangleMesh tessellate(const SceneLayout& layout, std::uint64_t albedo_seed);
TriangleMesh build_scene(const SceneSpec& spec);

/// Area-weighted unit vertex normals; zero for unreferenced vertices.
std::vector<Eigen::Vector3d> vertex_normals(const TriangleMesh& mesh);

TriangleMesh corrupt_mesh(const TriangleMesh& mesh, const CorruptionSpec& c, std::uint64_t seed);

/// Order-independent 64-bit ID of a triangle from its global vertex coordinates. Never 0.
std::uint64_t triangle_id_hash(const Eigen::Vector3d& v0, const Eigen::Vector3d& v1,
                               const Eigen::Vector3d& v2);

enum class ViewTag : std::uint8_t { left = 0, right = 1, back = 2, top = 3 };
inline constexpr std::array<ViewTag, 4> kViewTags{ViewTag::left, ViewTag::right, ViewTag::back,
                                                   ViewTag::top};
std::string_view to_string(ViewTag tag);
ViewTag view_tag_from_string(std::string_view name);

struct RenderedView {
  CameraIntrinsics intrinsics;
  Se3Transform pose;  // world-from-camera
  ImageF idepth;      // 1/m, 0 = background
  ImageF color;       // 3 channels
  ImageF normals;     // 3 channels, camera frame, facing the camera
  ImageF area;        // m^2, per triangle
  IdImage tri_id;     // 0 = background
  ViewTag tag = ViewTag::left;
};

/// Z-buffered rasterization of every mesh feature channel.
RenderedView rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k,
                       const Se3Transform& world_from_camera);

// Four-view rig around a vehicle frame (x forward, y left, z up).
inline constexpr double kLateralCameraHeight = 1.6;
inline constexpr double kTopCameraHeight = 8.0;
inline constexpr double kLocationSpacing = 0.65;
inline constexpr int kAugmentationsPerView = 3;

/// Canonical world-from-camera pose of `tag` for a vehicle at `world_from_vehicle`.
Se3Transform rig_pose(const Se3Transform& world_from_vehicle, ViewTag tag);
/// Small random perturbation: +-0.1 m per axis, +-2 degrees per axis.
Se3Transform pose_perturbation(std::uint64_t seed);
/// Default full-resolution intrinsics (96 x 288).
CameraIntrinsics default_intrinsics();

struct LocationRender {
  RenderedView lq;
  ImageF hq_idepth;
};

/// Renders left/right/back/top. The corrupted mesh supplies every input channel and the clean
/// mesh the supervision inverse depth. With a seed, each view's pose is perturbed.
std::array<LocationRender, 4> render_location(const TriangleMesh& clean, const TriangleMesh& corrupted,
                                              const Se3Transform& world_from_vehicle,
                                              const CameraIntrinsics& k,
                                              std::optional<std::uint64_t> augment_seed);

/// Vehicle pose of location `index` on the straight trajectory along +x through the origin.
Se3Transform trajectory_pose(int index, int location_count);

}  // namespace mvr
