#include "mvr/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <mutex>
#include <thread>

#include "mvr/checkpoint.hpp"
#include "mvr/errors.hpp"
#include "mvr/loss.hpp"
#include "mvr/rng.hpp"

namespace mvr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

SplitRange DatasetManifest::range(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

void assign_splits(DatasetManifest& m) {
  const int n_train = m.locations * 8 / 10;
  const int n_val = m.locations / 10;
  m.train = {0, n_train};
  m.val = {n_train, n_train + n_val};
  m.test = {n_train + n_val, m.locations};
}

json scene_to_json(const SceneSpec& s) {
  return {{"rng_seed", s.rng_seed},
          {"extent", s.extent},
          {"n_boxes", s.n_boxes},
          {"n_walls", s.n_walls},
          {"corruption",
           {{"noise_sigma", s.corruption.noise_sigma},
            {"hole_fraction", s.corruption.hole_fraction},
            {"bulge_amplitude", s.corruption.bulge_amplitude},
            {"bulge_wavelength", s.corruption.bulge_wavelength}}}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  s.extent = j.at("extent").get<double>();
  s.n_boxes = j.at("n_boxes").get<int>();
  s.n_walls = j.at("n_walls").get<int>();
  const json& c = j.at("corruption");
  s.corruption.noise_sigma = c.at("noise_sigma").get<double>();
  s.corruption.hole_fraction = c.at("hole_fraction").get<double>();
  s.corruption.bulge_amplitude = c.at("bulge_amplitude").get<double>();
  s.corruption.bulge_wavelength = c.at("bulge_wavelength").get<double>();
  return s;
}

json DatasetManifest::to_json() const {
  auto range_json = [](const SplitRange& r) { return json::array({r.begin, r.end}); };
  return {{"format_version", format_version},
          {"seed", seed},
          {"scene", scene_to_json(scene)},
          {"locations", locations},
          {"views_per_location", views_per_location},
          {"augmentations", augmentations},
          {"height", height},
          {"width", width},
          {"channels", channels},
          {"splits", {{"train", range_json(train)}, {"val", range_json(val)}, {"test", range_json(test)}}}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion) {
      throw FormatError("dataset format version " + std::to_string(m.format_version) + " is not supported (expected " +
                        std::to_string(kDatasetFormatVersion) + ")");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.scene = scene_from_json(j.at("scene"));
    m.locations = j.at("locations").get<int>();
    m.views_per_location = j.at("views_per_location").get<int>();
    m.augmentations = j.at("augmentations").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.channels = j.at("channels").get<std::vector<std::string>>();
    auto range = [&](const char* name) {
      const auto v = j.at("splits").at(name).get<std::vector<int>>();
      if (v.size() != 2) throw FormatError(std::string("manifest: bad split range '") + name + "'");
      return SplitRange{v[0], v[1]};
    };
    m.train = range("train");
    m.val = range("val");
    m.test = range("test");
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (m.train.begin != 0 || m.train.end != m.val.begin || m.val.end != m.test.begin || m.test.end != m.locations) {
    throw FormatError("manifest: splits are not contiguous and exhaustive");
  }
  return m;
}

fs::path location_dir(const fs::path& root, int location) {
  char name[32];
  std::snprintf(name, sizeof name, "loc_%06d", location);
  return root / name;
}

fs::path view_dir(const fs::path& root, int location, ViewTag tag, int variant) {
  std::string name = "view_" + std::string(to_string(tag));
  if (variant > 0) name += "_aug" + std::to_string(variant);
  return location_dir(root, location) / name;
}

namespace {

template <typename U>
void write_plane(const fs::path& path, const std::vector<U>& data) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size() * sizeof(U)));
}

template <typename U>
void read_plane(const fs::path& path, std::vector<U>& data) {
  const auto bytes = read_file(path);
  if (bytes.size() != data.size() * sizeof(U)) {
    throw FormatError("'" + path.string() + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(data.size() * sizeof(U)));
  }
  std::memcpy(data.data(), bytes.data(), bytes.size());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

}  // namespace

void write_view(const fs::path& dir, const StoredView& view) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  const RenderedView& v = view.lq;
  std::vector<double> pose;
  const Eigen::Matrix4d m = v.pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pose.push_back(m(r, c));
  }
  const json meta{{"tag", std::string(to_string(v.tag))},
                  {"variant", view.variant},
                  {"intrinsics", intrinsics_json(v.intrinsics)},
                  {"pose", pose},
                  {"mu", view.mu},
                  {"sigma", view.sigma}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  write_plane(dir / "idepth_lq.f32", v.idepth.storage());
  write_plane(dir / "idepth_hq.f32", view.hq_idepth.storage());
  write_plane(dir / "color.f32", v.color.storage());
  write_plane(dir / "normals.f32", v.normals.storage());
  write_plane(dir / "area.f32", v.area.storage());
  write_plane(dir / "tri_id.u64", v.tri_id.storage());
}

StoredView read_view(const fs::path& dir) {
  const json meta = read_json(dir / "meta.json");
  StoredView out;
  try {
    RenderedView& v = out.lq;
    v.intrinsics = intrinsics_from_json(meta.at("intrinsics"));
    const auto pose = meta.at("pose").get<std::vector<double>>();
    if (pose.size() != 16) throw FormatError("'" + dir.string() + "/meta.json': pose must have 16 entries");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m(r, c) = pose[r * 4 + c];
    }
    v.pose = Se3Transform::from_matrix(m);
    v.tag = view_tag_from_string(meta.at("tag").get<std::string>());
    out.variant = meta.at("variant").get<int>();
    out.mu = meta.at("mu").get<float>();
    out.sigma = meta.at("sigma").get<float>();
  } catch (const json::exception& e) {
    throw FormatError("'" + dir.string() + "/meta.json': " + e.what());
  }
  const int h = out.lq.intrinsics.height, w = out.lq.intrinsics.width;
  RenderedView& v = out.lq;
  v.idepth = ImageF(h, w);
  v.color = ImageF(h, w, 3);
  v.normals = ImageF(h, w, 3);
  v.area = ImageF(h, w);
  v.tri_id = IdImage(h, w);
  out.hq_idepth = ImageF(h, w);
  read_plane(dir / "idepth_lq.f32", v.idepth.storage());
  read_plane(dir / "idepth_hq.f32", out.hq_idepth.storage());
  read_plane(dir / "color.f32", v.color.storage());
  read_plane(dir / "normals.f32", v.normals.storage());
  read_plane(dir / "area.f32", v.area.storage());
  read_plane(dir / "tri_id.u64", v.tri_id.storage());
  return out;
}

DatasetManifest generate_dataset(const GenerateOptions& options, const fs::path& root) {
  if (options.locations < 1) throw std::invalid_argument("generate: --locations must be positive");
  if (options.augmentations < 0) throw std::invalid_argument("generate: --augmentations must be non-negative");
  if (options.downsample < 1) throw std::invalid_argument("generate: --downsample must be positive");
  SceneSpec spec = options.scene;
  spec.rng_seed = options.seed;
  spec.validate();

  const TriangleMesh clean = build_scene(spec);
  const TriangleMesh corrupted = corrupt_mesh(clean, spec.corruption, derive_seed(options.seed, 3));
  const CameraIntrinsics k = default_intrinsics().scaled(options.downsample);

  DatasetManifest m;
  m.seed = options.seed;
  m.scene = spec;
  m.locations = options.locations;
  m.augmentations = options.augmentations;
  m.height = k.height;
  m.width = k.width;
  m.channels = {"idepth_lq", "idepth_hq", "color", "normals", "area", "tri_id"};
  assign_splits(m);

  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());

  auto render_one = [&](int loc) {
    const Se3Transform vehicle = trajectory_pose(loc, options.locations);
    for (int variant = 0; variant <= options.augmentations; ++variant) {
      std::optional<std::uint64_t> aug;
      if (variant > 0) aug = derive_seed(derive_seed(options.seed, 4), static_cast<std::uint64_t>(loc) * 64 + variant);
      const auto views = render_location(clean, corrupted, vehicle, k, aug);
      for (const auto& lr : views) {
        StoredView sv{lr.lq, lr.hq_idepth, 0.0f, 1.0f, variant};
        const NormalizedPlane np = normalize_input(lr.lq.idepth);
        sv.mu = np.mu;
        sv.sigma = np.sigma;
        write_view(view_dir(root, loc, lr.lq.tag, variant), sv);
      }
    }
  };
  // Every location writes only its own directory, so workers need no coordination.
  const int threads = std::max(1, std::min(ad::num_threads(), options.locations));
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int loc = t; loc < options.locations; loc += threads) render_one(loc);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  write_text(root / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

Dataset Dataset::open(const fs::path& root) {
  Dataset d;
  d.root_ = root;
  d.manifest_ = DatasetManifest::from_json(read_json(root / "manifest.json"));
  return d;
}

Sample Dataset::load(int location, int variant) const {
  if (location < 0 || location >= manifest_.locations) {
    throw std::out_of_range("location " + std::to_string(location) + " not in dataset");
  }
  if (variant < 0 || variant > manifest_.augmentations) {
    throw std::out_of_range("variant " + std::to_string(variant) + " not in dataset");
  }
  Sample s;
  for (ViewTag tag : kViewTags) {
    StoredView v = read_view(view_dir(root_, location, tag, variant));
    s.bundle.views.push_back(make_view_input(v.lq));
    s.hq_idepth.push_back(std::move(v.hq_idepth));
  }
  return s;
}

Labels batch_labels(const std::vector<Sample>& samples) {
  std::vector<float> hq, lq;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.hq_idepth.size(); ++i) {
      hq.insert(hq.end(), s.hq_idepth[i].storage().begin(), s.hq_idepth[i].storage().end());
      const auto& d = s.bundle.views[i].idepth_lq.storage();
      lq.insert(lq.end(), d.begin(), d.end());
    }
  }
  return make_labels(hq, lq);
}

std::vector<ViewBundle> batch_bundles(const std::vector<Sample>& samples) {
  std::vector<ViewBundle> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.bundle);
  return out;
}

}  // namespace mvr
