#include "mvr/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

#include "mvr/rng.hpp"

namespace mvr {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Eigen::Vector3f random_albedo(Rng& rng, float lo, float hi) {
  return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
          static_cast<float>(uniform(rng, lo, hi))};
}

Eigen::Vector3f jitter(const Eigen::Vector3f& base, Rng& rng) {
  Eigen::Vector3f out;
  for (int c = 0; c < 3; ++c) {
    out[c] = std::clamp(base[c] + static_cast<float>(uniform(rng, -0.05, 0.05)), 0.0f, 1.0f);
  }
  return out;
}

// Appends an n1 x n2 grid spanning origin + [0,1]*e1 + [0,1]*e2; faces are oriented along e1 x e2.
void add_grid(TriangleMesh& mesh, const Eigen::Vector3d& origin, const Eigen::Vector3d& e1,
              const Eigen::Vector3d& e2, const Eigen::Vector3f& albedo, Rng& rng) {
  const int n1 = tessellation_cells(e1.norm());
  const int n2 = tessellation_cells(e2.norm());
  const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int j = 0; j <= n2; ++j) {
    for (int i = 0; i <= n1; ++i) {
      mesh.vertices.push_back(origin + e1 * (static_cast<double>(i) / n1) + e2 * (static_cast<double>(j) / n2));
    }
  }
  const auto at = [&](int i, int j) { return base + static_cast<std::uint32_t>(j * (n1 + 1) + i); };
  for (int j = 0; j < n2; ++j) {
    for (int i = 0; i < n1; ++i) {
      mesh.triangles.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      mesh.albedo.push_back(jitter(albedo, rng));
      mesh.triangles.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
      mesh.albedo.push_back(jitter(albedo, rng));
    }
  }
}

std::uint64_t hash_vertex(const Eigen::Vector3d& v) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (int i = 0; i < 3; ++i) {
    const double c = v[i] == 0.0 ? 0.0 : v[i];  // folds -0.0 onto +0.0
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(c));
  }
  return h;
}

// Sutherland-Hodgman against z >= near. Returns the vertex count (0, 3 or 4).
int clip_near(const std::array<Eigen::Vector3d, 3>& in, std::array<Eigen::Vector3d, 4>& out) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d& p = in[i];
    const Eigen::Vector3d& q = in[(i + 1) % 3];
    const bool p_in = p.z() >= kNearPlane;
    const bool q_in = q.z() >= kNearPlane;
    if (p_in) out[n++] = p;
    if (p_in != q_in) {
      const double s = (kNearPlane - p.z()) / (q.z() - p.z());
      Eigen::Vector3d x = p + s * (q - p);
      x.z() = kNearPlane;
      out[n++] = x;
    }
  }
  return n;
}

}  // namespace

double TriangleMesh::triangle_area(std::size_t i) const {
  const auto& t = triangles[i];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

void TriangleMesh::validate() const {
  if (albedo.size() != triangles.size()) throw std::invalid_argument("TriangleMesh: albedo/triangle count mismatch");
  for (std::size_t i = 0; i < triangles.size(); ++i) {
    for (auto idx : triangles[i]) {
      if (idx >= vertices.size()) throw std::invalid_argument("TriangleMesh: vertex index out of range");
    }
    if (triangle_area(i) < 1e-12) {
      throw std::invalid_argument("TriangleMesh: degenerate triangle " + std::to_string(i));
    }
  }
}

void CorruptionSpec::validate() const {
  if (!(noise_sigma >= 0.0) || !(bulge_amplitude >= 0.0) || !(bulge_wavelength > 0.0)) {
    throw std::invalid_argument("CorruptionSpec: negative magnitude or non-positive wavelength");
  }
  if (!(hole_fraction >= 0.0 && hole_fraction < 1.0)) {
    throw std::invalid_argument("CorruptionSpec: hole_fraction must lie in [0, 1)");
  }
}

void SceneSpec::validate() const {
  if (!(extent >= 20.0)) throw std::invalid_argument("SceneSpec: extent must be at least 20 m");
  if (n_boxes < 0 || n_walls < 0) throw std::invalid_argument("SceneSpec: negative primitive count");
  corruption.validate();
}

int tessellation_cells(double length) {
  // Square-ish cells whose diagonal stays within the edge bound.
  const double cell = kMaxTriangleEdge / std::numbers::sqrt2;
  return std::max(1, static_cast<int>(std::ceil(length / cell - 1e-9)));
}

SceneLayout scene_layout(const SceneSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, 1));
  SceneLayout layout;
  layout.extent = spec.extent;
  layout.ground_albedo = random_albedo(rng, 0.25f, 0.45f);
  const double half = spec.extent / 2.0;
  const double margin = 5.0;

  for (int i = 0; i < spec.n_boxes; ++i) {
    const double length = uniform(rng, 3.0, 9.0);
    const double width = uniform(rng, 1.8, 4.0);
    const double height = uniform(rng, 1.4, 6.0);
    const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double y_near = uniform(rng, 2.5, 9.0);  // clearance from the trajectory at y = 0
    const double x0 = uniform(rng, -half + margin, half - margin - length);
    const double y0 = side > 0 ? y_near : -y_near - width;
    layout.boxes.push_back({{x0, y0, 0.0}, {x0 + length, y0 + width, height}, random_albedo(rng, 0.1f, 0.9f)});
  }
  for (int i = 0; i < spec.n_walls; ++i) {
    const double length = uniform(rng, 6.0, 20.0);
    const double height = uniform(rng, 2.0, 5.0);
    const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double y = side * uniform(rng, 9.0, std::min(18.0, half - 1.0));
    const double x0 = uniform(rng, -half + margin, half - margin - length);
    // Orient so the front face looks at the road.
    Eigen::Vector2d start(x0, y), end(x0 + length, y);
    if (side < 0) std::swap(start, end);
    layout.walls.push_back({start, end, height, random_albedo(rng, 0.2f, 0.8f)});
  }
  return layout;
}

TriangleMesh tessellate(const SceneLayout& layout, std::uint64_t albedo_seed) {
  Rng rng(albedo_seed);
  TriangleMesh mesh;
  const double half = layout.extent / 2.0;
  add_grid(mesh, {-half, -half, 0.0}, {layout.extent, 0, 0}, {0, layout.extent, 0}, layout.ground_albedo, rng);
  for (const auto& b : layout.boxes) {
    const Eigen::Vector3d s = b.max - b.min;
    const double x0 = b.min.x(), y0 = b.min.y(), x1 = b.max.x(), y1 = b.max.y();
    add_grid(mesh, {x0, y0, b.max.z()}, {s.x(), 0, 0}, {0, s.y(), 0}, b.albedo, rng);  // top
    add_grid(mesh, {x0, y0, b.min.z()}, {s.x(), 0, 0}, {0, 0, s.z()}, b.albedo, rng);  // -y
    add_grid(mesh, {x0, y1, b.min.z()}, {0, 0, s.z()}, {s.x(), 0, 0}, b.albedo, rng);  // +y
    add_grid(mesh, {x0, y0, b.min.z()}, {0, 0, s.z()}, {0, s.y(), 0}, b.albedo, rng);  // -x
    add_grid(mesh, {x1, y0, b.min.z()}, {0, s.y(), 0}, {0, 0, s.z()}, b.albedo, rng);  // +x
  }
  for (const auto& w : layout.walls) {
    const Eigen::Vector2d d = w.end - w.start;
    add_grid(mesh, {w.start.x(), w.start.y(), 0.0}, {d.x(), d.y(), 0.0}, {0, 0, w.height}, w.albedo, rng);
  }
  return mesh;
}

TriangleMesh build_scene(const SceneSpec& spec) {
  return tessellate(scene_layout(spec), derive_seed(spec.rng_seed, 2));
}

std::vector<Eigen::Vector3d> vertex_normals(const TriangleMesh& mesh) {
  std::vector<Eigen::Vector3d> normals(mesh.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& t : mesh.triangles) {
    // The unnormalized cross product is twice the area times the unit normal.
    const Eigen::Vector3d n =
        (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto idx : t) normals[idx] += n;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

TriangleMesh corrupt_mesh(const TriangleMesh& mesh, const CorruptionSpec& c, std::uint64_t seed) {
  c.validate();
  TriangleMesh out = mesh;
  if (c.is_identity()) return out;
  Rng rng(seed);

  if (c.noise_sigma > 0.0 || c.bulge_amplitude > 0.0) {
    const auto normals = vertex_normals(mesh);
    const double phase_x = uniform(rng, 0.0, c.bulge_wavelength);
    const double phase_y = uniform(rng, 0.0, c.bulge_wavelength);
    const double k = 2.0 * std::numbers::pi / c.bulge_wavelength;
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
      const Eigen::Vector3d& v = mesh.vertices[i];
      double offset = c.noise_sigma > 0.0 ? normal(rng, 0.0, c.noise_sigma) : 0.0;
      offset += c.bulge_amplitude * std::sin(k * (v.x() + phase_x)) * std::sin(k * (v.y() + phase_y) + 0.5 * k * v.z());
      out.vertices[i] = v + offset * normals[i];
    }
  }

  if (c.hole_fraction > 0.0) {
    const std::size_t n = mesh.triangles.size();
    const auto remove = static_cast<std::size_t>(std::llround(c.hole_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first `remove` slots become a uniform sample without replacement.
    for (std::size_t i = 0; i < remove; ++i) {
      const std::size_t j = i + uniform_index(rng, n - i);
      std::swap(order[i], order[j]);
    }
    std::vector<bool> dropped(n, false);
    for (std::size_t i = 0; i < remove; ++i) dropped[order[i]] = true;
    out.triangles.clear();
    out.albedo.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (dropped[i]) continue;
      out.triangles.push_back(mesh.triangles[i]);
      out.albedo.push_back(mesh.albedo[i]);
    }
  }
  return out;
}

std::uint64_t triangle_id_hash(const Eigen::Vector3d& v0, const Eigen::Vector3d& v1,
                               const Eigen::Vector3d& v2) {
  std::array<std::uint64_t, 3> h{hash_vertex(v0), hash_vertex(v1), hash_vertex(v2)};
  std::sort(h.begin(), h.end());
  std::uint64_t id = splitmix64(h[0]);
  id = splitmix64(id ^ h[1]);
  id = splitmix64(id ^ h[2]);
  return id == 0 ? 1 : id;
}

std::string_view to_string(ViewTag tag) {
  switch (tag) {
    case ViewTag::left: return "left";
    case ViewTag::right: return "right";
    case ViewTag::back: return "back";
    case ViewTag::top: return "top";
  }
  return "?";
}

ViewTag view_tag_from_string(std::string_view name) {
  for (auto tag : kViewTags) {
    if (to_string(tag) == name) return tag;
  }
  throw std::invalid_argument("unknown view tag: " + std::string(name));
}

RenderedView rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k,
                       const Se3Transform& world_from_camera) {
  k.validate();
  const int h = k.height;
  const int w = k.width;
  RenderedView view;
  view.intrinsics = k;
  view.pose = world_from_camera;
  view.idepth = ImageF(h, w, 1);
  view.color = ImageF(h, w, 3);
  view.normals = ImageF(h, w, 3);
  view.area = ImageF(h, w, 1);
  view.tri_id = IdImage(h, w, 1);

  const Se3Transform camera_from_world = invert(world_from_camera);
  std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = camera_from_world * mesh.vertices[i];

  const double max_idepth = 1.0 / kNearPlane;
  std::array<Eigen::Vector3d, 4> poly;
  std::array<Eigen::Vector2d, 4> screen;
  for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
    const auto& tri = mesh.triangles[ti];
    const std::array<Eigen::Vector3d, 3> pc{cam[tri[0]], cam[tri[1]], cam[tri[2]]};
    if (pc[0].z() < kNearPlane && pc[1].z() < kNearPlane && pc[2].z() < kNearPlane) continue;
    const int n = clip_near(pc, poly);
    if (n < 3) continue;

    // Plane n.X = offset; along the ray X = t * (x, y, 1) the inverse depth is (n.dir) / offset.
    const Eigen::Vector3d plane_n = (pc[1] - pc[0]).cross(pc[2] - pc[0]);
    const double offset = plane_n.dot(pc[0]);
    if (std::abs(offset) < 1e-12 * plane_n.norm()) continue;  // edge-on

    double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
    for (int j = 0; j < n; ++j) {
      screen[j] = {k.fx * poly[j].x() / poly[j].z() + k.cx, k.fy * poly[j].y() / poly[j].z() + k.cy};
      umin = std::min(umin, screen[j].x());
      umax = std::max(umax, screen[j].x());
      vmin = std::min(vmin, screen[j].y());
      vmax = std::max(vmax, screen[j].y());
    }
    const int c0 = std::max(0, static_cast<int>(std::ceil(umin)));
    const int c1 = std::min(w - 1, static_cast<int>(std::floor(umax)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(vmin)));
    const int r1 = std::min(h - 1, static_cast<int>(std::floor(vmax)));
    if (c0 > c1 || r0 > r1) continue;

    double signed_area = 0.0;
    for (int j = 0; j < n; ++j) {
      const auto& a = screen[j];
      const auto& b = screen[(j + 1) % n];
      signed_area += a.x() * b.y() - a.y() * b.x();
    }
    if (std::abs(signed_area) < 1e-12) continue;
    const double orient = signed_area > 0 ? 1.0 : -1.0;

    Eigen::Vector3d normal_c = plane_n.normalized();
    if (normal_c.dot(pc[0]) > 0.0) normal_c = -normal_c;
    const auto& t_world = tri;
    const std::uint64_t id = triangle_id_hash(mesh.vertices[t_world[0]], mesh.vertices[t_world[1]],
                                              mesh.vertices[t_world[2]]);
    const float area = static_cast<float>(mesh.triangle_area(ti));
    const Eigen::Vector3f& albedo = mesh.albedo[ti];

    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        bool inside = true;
        for (int j = 0; j < n && inside; ++j) {
          // Evaluate shared edges with endpoints in a fixed order so neighbours agree bit-for-bit.
          const auto& p = screen[j];
          const auto& q = screen[(j + 1) % n];
          const bool swap = std::tie(q.x(), q.y()) < std::tie(p.x(), p.y());
          const auto& a = swap ? q : p;
          const auto& b = swap ? p : q;
          const double e = (b.x() - a.x()) * (r - a.y()) - (b.y() - a.y()) * (c - a.x());
          inside = (swap ? -orient : orient) * e >= 0.0;
        }
        if (!inside) continue;
        const Eigen::Vector3d dir((c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
        const double idepth = plane_n.dot(dir) / offset;
        if (!(idepth > 0.0) || idepth > max_idepth) continue;
        float& zbuf = view.idepth(r, c);
        const auto id32 = static_cast<float>(idepth);
        if (id32 <= zbuf) continue;
        zbuf = id32;
        for (int ch = 0; ch < 3; ++ch) {
          view.color(r, c, ch) = albedo[ch];
          view.normals(r, c, ch) = static_cast<float>(normal_c[ch]);
        }
        view.area(r, c) = area;
        view.tri_id(r, c) = id;
      }
    }
  }
  return view;
}

Se3Transform rig_pose(const Se3Transform& world_from_vehicle, ViewTag tag) {
  // Forward-looking camera: optical axis +x, image right = -y, image down = -z (vehicle frame).
  Eigen::Matrix3d forward;
  forward.col(0) = Eigen::Vector3d(0, -1, 0);
  forward.col(1) = Eigen::Vector3d(0, 0, -1);
  forward.col(2) = Eigen::Vector3d(1, 0, 0);
  Eigen::Matrix3d r;
  Eigen::Vector3d t(0, 0, kLateralCameraHeight);
  switch (tag) {
    case ViewTag::left: r = Eigen::AngleAxisd(90 * kDeg, Eigen::Vector3d::UnitZ()) * forward; break;
    case ViewTag::right: r = Eigen::AngleAxisd(-90 * kDeg, Eigen::Vector3d::UnitZ()) * forward; break;
    case ViewTag::back: r = Eigen::AngleAxisd(180 * kDeg, Eigen::Vector3d::UnitZ()) * forward; break;
    case ViewTag::top:
      r = Eigen::AngleAxisd(90 * kDeg, Eigen::Vector3d::UnitY()) * forward;
      t.z() = kTopCameraHeight;
      break;
  }
  return compose(world_from_vehicle, Se3Transform(r, t));
}

Se3Transform pose_perturbation(std::uint64_t seed) {
  Rng rng(seed);
  const double yaw = uniform(rng, -2.0, 2.0) * kDeg;
  const double pitch = uniform(rng, -2.0, 2.0) * kDeg;
  const double roll = uniform(rng, -2.0, 2.0) * kDeg;
  const Eigen::Vector3d t(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1));
  return Se3Transform::from_euler(yaw, pitch, roll, t);
}

CameraIntrinsics default_intrinsics() {
  CameraIntrinsics k;
  k.width = 288;
  k.height = 96;
  k.fx = 100.0;
  k.fy = 100.0;
  k.cx = (k.width - 1) / 2.0;
  k.cy = (k.height - 1) / 2.0;
  return k;
}

std::array<LocationRender, 4> render_location(const TriangleMesh& clean, const TriangleMesh& corrupted,
                                              const Se3Transform& world_from_vehicle,
                                              const CameraIntrinsics& k,
                                              std::optional<std::uint64_t> augment_seed) {
  std::array<LocationRender, 4> out;
  for (std::size_t i = 0; i < kViewTags.size(); ++i) {
    const ViewTag tag = kViewTags[i];
    Se3Transform pose = rig_pose(world_from_vehicle, tag);
    if (augment_seed) pose = compose(pose, pose_perturbation(derive_seed(*augment_seed, i)));
    out[i].lq = rasterize(corrupted, k, pose);
    out[i].lq.tag = tag;
    out[i].hq_idepth = rasterize(clean, k, pose).idepth;
  }
  return out;
}

Se3Transform trajectory_pose(int index, int location_count) {
  const double start = -0.5 * kLocationSpacing * (location_count - 1);
  return Se3Transform(Eigen::Matrix3d::Identity(), Eigen::Vector3d(start + kLocationSpacing * index, 0.0, 0.0));
}

}  // namespace mvr
