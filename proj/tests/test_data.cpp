#include <doctest.h>

#include "creid/data.hpp"
#include "creid/evaluation.hpp"
#include "test_support.hpp"

#include <filesystem>
#include <fstream>
#include <fmt/format.h>
#include <algorithm>
#include <map>
#include <set>

using namespace creid;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("creid_test_" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_fv(const fs::path& p, std::initializer_list<double> vals) {
  std::ofstream out(p);
  for (double v : vals) out << v << "\n";
}

}  // namespace

TEST_CASE("directory ingestion parses the id_cCAM naming convention") {
  TempDir dir("ingest");
  write_fv(dir.path / "0001_c1_f.fv", {1.0, 2.0});
  write_fv(dir.path / "0001_c2_f.fv", {3.0, 4.0});
  write_fv(dir.path / "0002_c1_f.fv", {5.0, 6.0});

  const auto split = data::load_dataset_dir(dir.path, data::DatasetLayout{},
                                            data::SplitRole::target_train);
  CHECK(split.size() == 3);
  CHECK(split.num_cameras() == 2);
  CHECK(split.num_identities() == 2);
  CHECK(split.payload_kind() == data::PayloadKind::feature);
  // Lexicographic order, cameras rebased to 0.
  CHECK(split.samples()[0].person_id == 1);
  CHECK(split.samples()[0].camera == 0);
  CHECK(split.samples()[1].camera == 1);
  CHECK(split.samples()[2].person_id == 2);
  CHECK(split.samples()[0].payload(1) == 2.0);
}

TEST_CASE("ingestion errors name the offending file; empty dirs are errors") {
  TempDir dir("ingest_err");
  write_fv(dir.path / "not-a-valid-name.fv", {1.0});
  CHECK_THROWS_WITH_AS(
      data::load_dataset_dir(dir.path, data::DatasetLayout{},
                             data::SplitRole::target_train),
      doctest::Contains("not-a-valid-name"), IngestionError);

  TempDir empty("ingest_empty");
  CHECK_THROWS_WITH_AS(
      data::load_dataset_dir(empty.path, data::DatasetLayout{},
                             data::SplitRole::target_train),
      doctest::Contains("no files"), IngestionError);
}

TEST_CASE("two loads of one directory are identical") {
  TempDir dir("ingest_det");
  write_fv(dir.path / "0003_c1_a.fv", {0.5});
  write_fv(dir.path / "0001_c2_b.fv", {1.5});
  write_fv(dir.path / "0002_c1_c.fv", {2.5});
  const auto a = data::load_dataset_dir(dir.path, data::DatasetLayout{},
                                        data::SplitRole::target_train);
  const auto b = data::load_dataset_dir(dir.path, data::DatasetLayout{},
                                        data::SplitRole::target_train);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples()[i].person_id == b.samples()[i].person_id);
    CHECK(a.samples()[i].camera == b.samples()[i].camera);
    CHECK(a.samples()[i].payload == b.samples()[i].payload);
  }
}

TEST_CASE("distractor ids carry the reserved flag and no identity") {
  TempDir dir("distractor");
  write_fv(dir.path / "-1_c1_x.fv", {1.0});
  write_fv(dir.path / "0005_c2_y.fv", {2.0});
  const auto split = data::load_dataset_dir(dir.path, data::DatasetLayout{},
                                            data::SplitRole::gallery);
  CHECK(split.samples()[0].distractor);
  CHECK_FALSE(split.samples()[0].person_id.has_value());
  CHECK_FALSE(split.samples()[1].distractor);
  CHECK(split.num_identities() == 1);
}

TEST_CASE("synthetic generation is bitwise reproducible from the seed") {
  data::SyntheticSpec spec;
  spec.num_identities = 6;
  spec.samples_per_id = 4;
  spec.seed = 99;
  const auto a = data::generate_synthetic(spec);
  const auto b = data::generate_synthetic(spec);
  REQUIRE(a.target_train.size() == b.target_train.size());
  for (size_t i = 0; i < a.target_train.size(); ++i) {
    CHECK(a.target_train.samples()[i].payload ==
          b.target_train.samples()[i].payload);
    CHECK(a.target_train.samples()[i].camera ==
          b.target_train.samples()[i].camera);
  }
  for (size_t i = 0; i < a.query.size(); ++i)
    CHECK(a.query.samples()[i].payload == b.query.samples()[i].payload);
}

TEST_CASE("correlation=1 pins every identity to exactly one camera") {
  data::SyntheticSpec spec;
  spec.num_identities = 12;
  spec.num_cameras = 5;
  spec.samples_per_id = 10;
  spec.correlation = 1.0;
  spec.seed = 3;
  const auto d = data::generate_synthetic(spec);
  std::map<int, std::set<int>> cams_per_id;
  for (const auto& s : d.target_train.samples())
    cams_per_id[*s.person_id].insert(s.camera);
  for (const auto& [id, cams] : cams_per_id) CHECK(cams.size() == 1);
}

TEST_CASE("correlation=0 leaves id and camera nearly independent") {
  data::SyntheticSpec spec;
  spec.num_identities = 10;
  spec.num_cameras = 4;
  spec.samples_per_id = 32;
  spec.correlation = 0.0;
  spec.seed = 5;
  const auto d = data::generate_synthetic(spec);
  std::vector<int> ids, cams;
  for (const auto& s : d.target_train.samples()) {
    ids.push_back(*s.person_id);
    cams.push_back(s.camera);
  }
  CHECK(eval::mutual_information(ids, cams) < 0.1);
}

TEST_CASE("camera shift scale monotonically separates cameras") {
  auto mean_between_camera_distance = [](double scale) {
    data::SyntheticSpec spec;
    spec.num_identities = 8;
    spec.num_cameras = 3;
    spec.samples_per_id = 12;
    spec.correlation = 0.0;
    spec.noise_sigma = 0.05;
    spec.camera_shift_scale = scale;
    spec.seed = 11;
    const auto d = data::generate_synthetic(spec);
    // Mean distance between per-camera centroids of same-ID samples.
    std::map<std::pair<int, int>, std::pair<Vec, int>> acc;
    for (const auto& s : d.target_train.samples()) {
      auto& slot = acc.try_emplace({*s.person_id, s.camera},
                                   Vec::Zero(s.payload.size()), 0)
                       .first->second;
      slot.first += s.payload;
      slot.second += 1;
    }
    double total = 0.0;
    int count = 0;
    for (auto it = acc.begin(); it != acc.end(); ++it)
      for (auto jt = std::next(it); jt != acc.end(); ++jt) {
        if (it->first.first != jt->first.first) continue;
        total += (it->second.first / it->second.second -
                  jt->second.first / jt->second.second)
                     .norm();
        ++count;
      }
    return total / count;
  };
  const double d0 = mean_between_camera_distance(0.5);
  const double d1 = mean_between_camera_distance(1.5);
  const double d2 = mean_between_camera_distance(3.0);
  CHECK(d0 < d1);
  CHECK(d1 < d2);
}

TEST_CASE("samples_per_id below 2 is rejected") {
  data::SyntheticSpec spec;
  spec.samples_per_id = 1;
  CHECK_THROWS_AS(data::generate_synthetic(spec), Error);
}

TEST_CASE("hide_labels seals IDs away from the training-visible surface") {
  data::SyntheticSpec spec;
  spec.num_identities = 4;
  spec.samples_per_id = 3;
  auto d = data::generate_synthetic(spec);
  const auto hidden = data::hide_labels(d.target_train);

  for (const auto& s : hidden.samples()) CHECK_FALSE(s.person_id.has_value());
  CHECK_FALSE(hidden.num_identities().has_value());
  for (const auto& id : hidden.visible_ids()) CHECK_FALSE(id.has_value());

  // The diagnostic channel still recovers them.
  const auto sealed = eval::Diagnostics::true_ids(hidden);
  REQUIRE(sealed.size() == d.target_train.size());
  for (size_t i = 0; i < sealed.size(); ++i)
    CHECK(sealed[i] == d.target_train.samples()[i].person_id);

  // Role mismatch.
  CHECK_THROWS_AS(data::hide_labels(d.gallery), IngestionError);
}

TEST_CASE("feature splits round-trip through write_split_dir") {
  data::SyntheticSpec spec;
  spec.num_identities = 3;
  spec.samples_per_id = 2;
  spec.id_dim = 4;
  const auto d = data::generate_synthetic(spec);
  TempDir dir("roundtrip");
  data::write_split_dir(d.target_train, dir.path);
  const auto loaded = data::load_dataset_dir(dir.path, data::DatasetLayout{},
                                             data::SplitRole::target_train);
  REQUIRE(loaded.size() == d.target_train.size());
  CHECK(loaded.num_cameras() == d.target_train.num_cameras());
  // Loading orders lexicographically, so compare as multisets.
  auto signature = [](const data::DatasetSplit& s) {
    std::vector<std::string> out;
    for (const auto& smp : s.samples()) {
      std::string sig = fmt::format("{}|{}", smp.person_id.value_or(-1), smp.camera);
      for (Eigen::Index j = 0; j < smp.payload.size(); ++j)
        sig += fmt::format("|{:.12g}", smp.payload(j));
      out.push_back(sig);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  CHECK(signature(loaded) == signature(d.target_train));
}

TEST_CASE("hflip_batch flips image width and leaves features unchanged") {
  const data::ImageShape shape{2, 3, 1};
  Mat img(1, 6);
  img << 1, 2, 3, 4, 5, 6;
  const Mat flipped = data::hflip_batch(img, data::PayloadKind::image, shape);
  Mat expected(1, 6);
  expected << 3, 2, 1, 6, 5, 4;
  CHECK(flipped == expected);
  CHECK(data::hflip_batch(img, data::PayloadKind::feature, {}) == img);
}

#ifdef CREID_HAVE_OPENCV
TEST_CASE("image payload ingestion decodes and rescales to unit floats") {
  TempDir dir("imgs");
  // A tiny binary PGM: 4x4, max 255.
  auto write_pgm = [&](const fs::path& p, unsigned char value) {
    std::ofstream out(p, std::ios::binary);
    out << "P5\n4 4\n255\n";
    for (int i = 0; i < 16; ++i) out.put(static_cast<char>(value));
  };
  write_pgm(dir.path / "0001_c1_a.pgm", 255);
  write_pgm(dir.path / "0002_c2_b.pgm", 0);
  data::DatasetLayout layout;
  layout.image_size = {8, 4, 1};
  const auto split =
      data::load_dataset_dir(dir.path, layout, data::SplitRole::target_train);
  CHECK(split.payload_kind() == data::PayloadKind::image);
  CHECK(split.payload_dim() == 32);
  CHECK(split.samples()[0].payload.maxCoeff() == doctest::Approx(1.0));
  CHECK(split.samples()[1].payload.maxCoeff() == doctest::Approx(0.0));
}
#endif
