#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "mvr/checkpoint.hpp"
#include "mvr/dataset.hpp"
#include "mvr/errors.hpp"
#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;
using mvr::test::TempDir;
using Bytes = std::vector<std::uint8_t>;

mvr::GenerateOptions small_options(std::uint64_t seed, int locations = 2, int augmentations = 1) {
  mvr::GenerateOptions g;
  g.seed = seed;
  g.locations = locations;
  g.augmentations = augmentations;
  g.downsample = 8;
  g.scene = {seed, 60.0, 10, 4, {0.03, 0.02, 0.15, 8.0}};
  return g;
}

// Every regular file under `root`, keyed by relative path.
std::map<std::string, Bytes> tree(const fs::path& root) {
  std::map<std::string, Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = mvr::read_file(e.path());
  }
  return out;
}

void put_u32(Bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(Bytes& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(Bytes& b, float f) { put_u32(b, std::bit_cast<std::uint32_t>(f)); }

TEST(Splits, ContiguousEightyTenTen) {
  for (int n : {1, 2, 9, 10, 11, 32, 100, 257}) {
    mvr::DatasetManifest m;
    m.locations = n;
    mvr::assign_splits(m);
    EXPECT_EQ(m.train.begin, 0);
    EXPECT_EQ(m.train.end, m.val.begin);
    EXPECT_EQ(m.val.end, m.test.begin);
    EXPECT_EQ(m.test.end, n);
    EXPECT_EQ(m.train.size(), n * 8 / 10);
    EXPECT_EQ(m.val.size(), n / 10);
  }
  mvr::DatasetManifest m;
  m.locations = 100;
  mvr::assign_splits(m);
  EXPECT_EQ(m.range(mvr::Split::val).begin, 80);
  EXPECT_EQ(m.range(mvr::Split::test).size(), 10);
}

TEST(Splits, NamesRoundTrip) {
  for (auto s : {mvr::Split::train, mvr::Split::val, mvr::Split::test}) {
    EXPECT_EQ(mvr::split_from_string(mvr::to_string(s)), s);
  }
  EXPECT_THROW(mvr::split_from_string("holdout"), std::invalid_argument);
}

TEST(Manifest, JsonRoundTripAndChecks) {
  mvr::DatasetManifest m;
  m.seed = 42;
  m.scene = {42, 50.0, 3, 2, {0.1, 0.2, 0.3, 4.0}};
  m.locations = 20;
  m.augmentations = 2;
  m.height = 12;
  m.width = 36;
  m.channels = {"idepth_lq", "idepth_hq"};
  mvr::assign_splits(m);
  const auto j = m.to_json();
  EXPECT_EQ(mvr::DatasetManifest::from_json(j).to_json(), j);

  auto bad = j;
  bad["format_version"] = mvr::kDatasetFormatVersion + 1;
  EXPECT_THROW(mvr::DatasetManifest::from_json(bad), mvr::FormatError);
  bad = j;
  bad["splits"]["val"] = {15, 19};
  EXPECT_THROW(mvr::DatasetManifest::from_json(bad), mvr::FormatError);
  bad = j;
  bad.erase("scene");
  EXPECT_THROW(mvr::DatasetManifest::from_json(bad), mvr::FormatError);
}

TEST(Generate, LayoutMatchesManifest) {
  TempDir dir("ds_layout");
  const auto m = mvr::generate_dataset(small_options(3), dir.path());
  EXPECT_EQ(m.locations, 2);
  EXPECT_EQ(m.height, 12);
  EXPECT_EQ(m.width, 36);
  std::set<std::string> locs;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    if (e.is_directory()) locs.insert(e.path().filename().string());
  }
  EXPECT_EQ(locs, (std::set<std::string>{"loc_000000", "loc_000001"}));
  const std::set<std::string> expected_views{"view_left",      "view_right",      "view_back",      "view_top",
                                             "view_left_aug1", "view_right_aug1", "view_back_aug1", "view_top_aug1"};
  const std::set<std::string> expected_files{"meta.json",  "idepth_lq.f32", "idepth_hq.f32", "color.f32",
                                             "normals.f32", "area.f32",      "tri_id.u64"};
  const std::size_t hw = 12 * 36;
  for (const auto& loc : locs) {
    std::set<std::string> views;
    for (const auto& v : fs::directory_iterator(dir.path() / loc)) {
      views.insert(v.path().filename().string());
      std::set<std::string> files;
      for (const auto& f : fs::directory_iterator(v.path())) files.insert(f.path().filename().string());
      EXPECT_EQ(files, expected_files) << v.path();
      EXPECT_EQ(fs::file_size(v.path() / "idepth_lq.f32"), 4 * hw);
      EXPECT_EQ(fs::file_size(v.path() / "color.f32"), 4 * 3 * hw);
      EXPECT_EQ(fs::file_size(v.path() / "normals.f32"), 4 * 3 * hw);
      EXPECT_EQ(fs::file_size(v.path() / "tri_id.u64"), 8 * hw);
    }
    EXPECT_EQ(views, expected_views);
  }
  const auto opened = mvr::Dataset::open(dir.path());
  EXPECT_EQ(opened.manifest().to_json(), m.to_json());
}

TEST(Generate, SameSeedGivesByteIdenticalTrees) {
  TempDir a("ds_a"), b("ds_b"), c("ds_c");
  mvr::generate_dataset(small_options(4), a.path());
  mvr::generate_dataset(small_options(4), b.path());
  mvr::generate_dataset(small_options(5), c.path());
  const auto ta = tree(a.path());
  EXPECT_EQ(ta, tree(b.path()));
  EXPECT_NE(ta, tree(c.path()));
}

TEST(Generate, ThreadCountDoesNotChangeOutput) {
  TempDir a("ds_t1"), b("ds_t3");
  const int before = mvr::ad::num_threads();
  mvr::ad::set_num_threads(1);
  mvr::generate_dataset(small_options(6, 3, 0), a.path());
  mvr::ad::set_num_threads(3);
  mvr::generate_dataset(small_options(6, 3, 0), b.path());
  mvr::ad::set_num_threads(before);
  EXPECT_EQ(tree(a.path()), tree(b.path()));
}

TEST(Generate, FlatSceneTopViewIsConstant) {
  auto opts = small_options(7, 1, 0);
  opts.scene.n_boxes = 0;
  opts.scene.n_walls = 0;
  TempDir dir("ds_flat");
  mvr::generate_dataset(opts, dir.path());
  const auto v = mvr::read_view(mvr::view_dir(dir.path(), 0, mvr::ViewTag::top, 0));
  for (float d : v.hq_idepth.storage()) ASSERT_NEAR(d, 1.0 / mvr::kTopCameraHeight, 1e-5);
}

TEST(Generate, RejectsBadOptions) {
  TempDir dir("ds_bad");
  auto o = small_options(1);
  o.locations = 0;
  EXPECT_THROW(mvr::generate_dataset(o, dir.path()), std::invalid_argument);
  o = small_options(1);
  o.downsample = 0;
  EXPECT_THROW(mvr::generate_dataset(o, dir.path()), std::invalid_argument);
}

TEST(Views, WriteReadWriteIsByteIdentical) {
  TempDir dir("ds_views");
  mvr::generate_dataset(small_options(8, 1, 1), dir.path());
  for (auto tag : mvr::kViewTags) {
    for (int variant : {0, 1}) {
      const fs::path src = mvr::view_dir(dir.path(), 0, tag, variant);
      const auto v = mvr::read_view(src);
      EXPECT_EQ(v.lq.tag, tag);
      EXPECT_EQ(v.variant, variant);
      const fs::path copy = dir.path() / "copy";
      mvr::write_view(copy, v);
      EXPECT_EQ(tree(copy), tree(src));
      fs::remove_all(copy);
    }
  }
}

TEST(Views, StoredStatisticsMatchNormalization) {
  TempDir dir("ds_stats");
  mvr::generate_dataset(small_options(9, 1, 0), dir.path());
  for (auto tag : mvr::kViewTags) {
    const auto v = mvr::read_view(mvr::view_dir(dir.path(), 0, tag, 0));
    const auto n = mvr::normalize_input(v.lq.idepth);
    EXPECT_EQ(v.mu, n.mu);
    EXPECT_EQ(v.sigma, n.sigma);
  }
}

TEST(Views, TruncatedPlaneIsFormatError) {
  TempDir dir("ds_trunc");
  mvr::generate_dataset(small_options(10, 1, 0), dir.path());
  const fs::path v = mvr::view_dir(dir.path(), 0, mvr::ViewTag::left, 0);
  fs::resize_file(v / "area.f32", 12);
  EXPECT_THROW(mvr::read_view(v), mvr::FormatError);
  fs::remove(v / "color.f32");
  EXPECT_THROW(mvr::read_view(v), mvr::IoError);
}

TEST(Dataset, LoadOrderAndRanges) {
  TempDir dir("ds_load");
  mvr::generate_dataset(small_options(11, 2, 1), dir.path());
  const auto d = mvr::Dataset::open(dir.path());
  const auto s = d.load(1, 1);
  ASSERT_EQ(s.bundle.views.size(), 4u);
  ASSERT_EQ(s.hq_idepth.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto v = mvr::read_view(mvr::view_dir(dir.path(), 1, mvr::kViewTags[i], 1));
    EXPECT_EQ(s.bundle.views[i].idepth_lq.storage(), v.lq.idepth.storage());
    EXPECT_EQ(s.hq_idepth[i].storage(), v.hq_idepth.storage());
  }
  EXPECT_THROW(d.load(2), std::out_of_range);
  EXPECT_THROW(d.load(0, 2), std::out_of_range);
  EXPECT_THROW(mvr::Dataset::open(dir.path() / "missing"), mvr::IoError);
}

TEST(Dataset, BatchLabelsStackViews) {
  TempDir dir("ds_labels");
  mvr::generate_dataset(small_options(12, 2, 0), dir.path());
  const auto d = mvr::Dataset::open(dir.path());
  const std::vector<mvr::Sample> batch{d.load(0), d.load(1)};
  const auto labels = mvr::batch_labels(batch);
  const std::size_t hw = 12 * 36;
  ASSERT_EQ(labels.g.size(), 8 * hw);
  const auto& s = batch[1];
  for (std::size_t i = 0; i < hw; ++i) {
    const float hq = s.hq_idepth[2].storage()[i], lq = s.bundle.views[2].idepth_lq.storage()[i];
    const std::size_t k = 6 * hw + i;
    ASSERT_EQ(labels.valid[k], hq > 0 && lq > 0);
    if (labels.valid[k]) ASSERT_EQ(labels.g[k], hq - lq);
  }
}

TEST(CheckpointFormat, HandBuiltBytes) {
  const std::vector<mvr::CheckpointEntry> entries{{"ab", {2}, {1.5f, -2.0f}}, {"c", {1, 1}, {0.25f}}};
  Bytes want{'M', 'V', 'R', 'F', '0', '0', '0', '1'};
  put_u32(want, 2);
  // Header: 8 + 4 + (4 + 2 + 4 + 4 + 8) + (4 + 1 + 4 + 8 + 8) = 59 bytes.
  put_u32(want, 2);
  want.insert(want.end(), {'a', 'b'});
  put_u32(want, 1);
  put_u32(want, 2);
  put_u64(want, 59);
  put_u32(want, 1);
  want.push_back('c');
  put_u32(want, 2);
  put_u32(want, 1);
  put_u32(want, 1);
  put_u64(want, 67);
  ASSERT_EQ(want.size(), 59u);
  put_f32(want, 1.5f);
  put_f32(want, -2.0f);
  put_f32(want, 0.25f);
  EXPECT_EQ(mvr::encode_checkpoint(entries), want);

  const auto back = mvr::decode_checkpoint(want);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "ab");
  EXPECT_EQ(back[1].shape, (std::vector<std::uint32_t>{1, 1}));
  EXPECT_EQ(back[0].values, entries[0].values);
}

TEST(CheckpointFormat, ModelRoundTripIsByteIdentical) {
  mvr::ModelConfig c;
  c.base_width = 4;
  c.aggregation = mvr::Aggregation::attention;
  c.feature_transform = true;
  c.fsr_hidden = 16;
  c.fsr_layers = 2;
  c.fsr_dim = 6;
  const auto params = mvr::init_parameters<float>(c, 17);
  TempDir dir("ckpt_model");
  const fs::path p = dir.path() / "m.mvrf";
  mvr::save_model(p, c, params);
  const auto loaded = mvr::load_model(p);
  EXPECT_EQ(mvr::config_to_json(loaded.config), mvr::config_to_json(c));
  const fs::path q = dir.path() / "n.mvrf";
  mvr::save_model(q, loaded.config, loaded.params);
  EXPECT_EQ(mvr::read_file(p), mvr::read_file(q));
  EXPECT_EQ(mvr::read_file(mvr::config_sidecar(p)), mvr::read_file(mvr::config_sidecar(q)));
}

TEST(CheckpointFormat, CorruptInputsAreFormatErrors) {
  const Bytes good = mvr::encode_checkpoint({{"w", {3}, {1.0f, 2.0f, 3.0f}}});
  Bytes bad_magic = good;
  bad_magic[3] = 'X';
  EXPECT_THROW(mvr::decode_checkpoint(bad_magic), mvr::FormatError);
  for (std::size_t n : {0ul, 5ul, 12ul, 20ul, good.size() - 1}) {
    EXPECT_THROW(mvr::decode_checkpoint(std::span(good).first(n)), mvr::FormatError) << n;
  }
  // Shape product that wraps 64 bits.
  Bytes huge{'M', 'V', 'R', 'F', '0', '0', '0', '1'};
  put_u32(huge, 1);
  put_u32(huge, 1);
  huge.push_back('h');
  put_u32(huge, 4);
  for (int i = 0; i < 4; ++i) put_u32(huge, 0x10000u);
  put_u64(huge, huge.size() + 8);
  put_f32(huge, 1.0f);
  EXPECT_THROW(mvr::decode_checkpoint(huge), mvr::FormatError);

  EXPECT_THROW(mvr::encode_checkpoint({{"w", {2}, {1.0f}}}), std::invalid_argument);
}

TEST(CheckpointFormat, MissingOrMisshapenParameters) {
  mvr::ModelConfig c;
  c.base_width = 4;
  auto params = mvr::init_parameters<float>(c, 1);
  auto entries = mvr::parameter_entries(params);
  auto dropped = entries;
  dropped.erase(dropped.begin() + 3);
  EXPECT_THROW(mvr::load_parameter_entries(dropped, params), mvr::FormatError);
  auto reshaped = entries;
  reshaped[0].shape.push_back(1);
  EXPECT_THROW(mvr::load_parameter_entries(reshaped, params), mvr::FormatError);
  EXPECT_THROW(mvr::load_model("/nonexistent/model.mvrf"), mvr::IoError);
}

}  // namespace
