#include "creid/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>

#include <fmt/format.h>

#ifdef CREID_HAVE_OPENCV
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#endif

namespace creid::data {

namespace fs = std::filesystem;

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::source_train: return "source_train";
    case SplitRole::target_train: return "target_train";
    case SplitRole::gallery: return "gallery";
    case SplitRole::query: return "query";
  }
  return "?";
}

DatasetSplit::DatasetSplit(std::vector<Sample> samples, SplitRole role,
                           int num_cameras, std::optional<int> num_identities,
                           PayloadKind kind, ImageShape image_shape)
    : samples_(std::move(samples)), role_(role), num_cameras_(num_cameras),
      num_identities_(num_identities), kind_(kind), image_shape_(image_shape) {
  for (const Sample& s : samples_) {
    if (s.camera < 0 || s.camera >= num_cameras_)
      throw IngestionError(fmt::format("sample camera {} outside [0, {})",
                                       s.camera, num_cameras_));
  }
  if ((role_ == SplitRole::gallery || role_ == SplitRole::query)) {
    // Distractor entries carry no identity by design; everything else must.
    for (const Sample& s : samples_)
      if (!s.person_id && !s.distractor)
        throw IngestionError(fmt::format(
            "{} split requires person IDs on every sample", to_string(role_)));
  }
}

int DatasetSplit::payload_dim() const {
  if (samples_.empty()) return kind_ == PayloadKind::image ? image_shape_.size() : 0;
  return static_cast<int>(samples_.front().payload.size());
}

std::vector<int> DatasetSplit::cameras() const {
  std::vector<int> out;
  out.reserve(samples_.size());
  for (const Sample& s : samples_) out.push_back(s.camera);
  return out;
}

std::vector<std::optional<int>> DatasetSplit::visible_ids() const {
  std::vector<std::optional<int>> out;
  out.reserve(samples_.size());
  for (const Sample& s : samples_) out.push_back(s.person_id);
  return out;
}

namespace {

bool is_image_ext(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp" ||
         ext == ".pgm" || ext == ".ppm";
}

Vec load_feature_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError(fmt::format("cannot open '{}'", path.string()));
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (vals.empty())
    throw IngestionError(fmt::format("feature file '{}' is empty", path.string()));
  return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Vec load_image_file(const fs::path& path, const ImageShape& shape) {
#ifdef CREID_HAVE_OPENCV
  cv::Mat img = cv::imread(path.string(), shape.channels == 1
                                              ? cv::IMREAD_GRAYSCALE
                                              : cv::IMREAD_COLOR);
  if (img.empty())
    throw IngestionError(fmt::format("cannot decode image '{}'", path.string()));
  cv::Mat resized;
  cv::resize(img, resized, cv::Size(shape.width, shape.height), 0, 0,
             cv::INTER_AREA);
  Vec out(shape.size());
  const int hw = shape.height * shape.width;
  for (int y = 0; y < shape.height; ++y)
    for (int x = 0; x < shape.width; ++x) {
      if (shape.channels == 1) {
        out(y * shape.width + x) = resized.at<uchar>(y, x) / 255.0;
      } else {
        const auto px = resized.at<cv::Vec3b>(y, x);
        // OpenCV loads BGR; store RGB planes.
        out(0 * hw + y * shape.width + x) = px[2] / 255.0;
        out(1 * hw + y * shape.width + x) = px[1] / 255.0;
        out(2 * hw + y * shape.width + x) = px[0] / 255.0;
      }
    }
  return out;
#else
  (void)shape;
  throw IngestionError(fmt::format(
      "image '{}' requires OpenCV support, which this build lacks",
      path.string()));
#endif
}

}  // namespace

DatasetSplit load_dataset_dir(const fs::path& dir, const DatasetLayout& layout,
                              SplitRole role) {
  if (!fs::is_directory(dir))
    throw IngestionError(fmt::format("'{}' is not a directory", dir.string()));

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });
  if (files.empty())
    throw IngestionError(fmt::format("directory '{}' contains no files", dir.string()));

  const std::regex re(layout.pattern);
  std::vector<Sample> samples;
  std::set<int> ids;
  std::optional<PayloadKind> kind;
  int max_camera = -1;
  for (const fs::path& f : files) {
    const std::string name = f.filename().string();
    std::smatch m;
    if (!std::regex_search(name, m, re) || m.size() < 3)
      throw IngestionError(
          fmt::format("filename '{}' does not match layout pattern '{}'", name,
                      layout.pattern));
    Sample s;
    const int raw_id = std::stoi(m[1].str());
    const int raw_cam = std::stoi(m[2].str());
    s.camera = raw_cam - layout.camera_index_base;
    if (s.camera < 0)
      throw IngestionError(fmt::format(
          "filename '{}': camera {} below camera_index_base {}", name, raw_cam,
          layout.camera_index_base));
    s.distractor = layout.distractor_ids.count(raw_id) > 0;
    if (!s.distractor) {
      if (raw_id < 0)
        throw IngestionError(fmt::format(
            "filename '{}': negative id {} is not a declared distractor", name,
            raw_id));
      s.person_id = raw_id;
      ids.insert(raw_id);
    }
    max_camera = std::max(max_camera, s.camera);

    const PayloadKind this_kind =
        f.extension() == ".fv" ? PayloadKind::feature : PayloadKind::image;
    if (this_kind == PayloadKind::image && !is_image_ext(f.extension().string()))
      throw IngestionError(
          fmt::format("filename '{}': unsupported payload extension", name));
    if (kind && *kind != this_kind)
      throw IngestionError(fmt::format(
          "directory '{}' mixes image and feature payloads", dir.string()));
    kind = this_kind;

    s.payload = this_kind == PayloadKind::feature
                    ? load_feature_file(f)
                    : load_image_file(f, layout.image_size);
    s.source_index = static_cast<int>(samples.size());
    samples.push_back(std::move(s));
  }

  for (size_t i = 1; i < samples.size(); ++i)
    if (samples[i].payload.size() != samples[0].payload.size())
      throw IngestionError(fmt::format(
          "directory '{}': inconsistent payload dimensions", dir.string()));

  return DatasetSplit(std::move(samples), role, max_camera + 1,
                      static_cast<int>(ids.size()), *kind,
                      *kind == PayloadKind::image ? layout.image_size
                                                  : ImageShape{});
}

void write_split_dir(const DatasetSplit& split, const fs::path& dir) {
  if (split.payload_kind() != PayloadKind::feature)
    throw IngestionError("write_split_dir supports feature payloads only");
  fs::create_directories(dir);
  for (size_t i = 0; i < split.samples().size(); ++i) {
    const Sample& s = split.samples()[i];
    const int id = s.person_id.value_or(-1);
    const auto name =
        fmt::format("{:04d}_c{}_{:05d}.fv", id, s.camera + 1, i);
    std::ofstream out(dir / name);
    if (!out) throw IngestionError(fmt::format("cannot write '{}'", (dir / name).string()));
    for (Eigen::Index j = 0; j < s.payload.size(); ++j)
      out << fmt::format("{:.17g}\n", s.payload(j));
  }
}

namespace {

struct SyntheticDraw {
  std::vector<Sample> samples;
};

int draw_camera(Rng& rng, double correlation, int assigned, int num_cameras) {
  if (rng.uniform() < correlation) return assigned;
  return static_cast<int>(rng.uniform_int(0, num_cameras - 1));
}

Sample make_sample(const Vec& code, const std::vector<Vec>& shifts, int camera,
                   int id, double noise_sigma, Rng& noise_rng) {
  Sample s;
  s.person_id = id;
  s.camera = camera;
  Vec x = code + shifts[static_cast<size_t>(camera)];
  for (Eigen::Index j = 0; j < x.size(); ++j)
    x(j) += noise_rng.normal(0.0, noise_sigma);
  s.payload = std::move(x);
  return s;
}

void validate(const SyntheticSpec& spec) {
  if (spec.samples_per_id < 2)
    throw Error("SyntheticSpec: samples_per_id must be >= 2 (triplet mining "
                "needs at least two samples per identity)");
  if (spec.num_identities < 2) throw Error("SyntheticSpec: need >= 2 identities");
  if (spec.num_cameras < 1) throw Error("SyntheticSpec: need >= 1 camera");
  if (spec.id_dim < 1) throw Error("SyntheticSpec: id_dim must be >= 1");
  if (spec.correlation < 0.0 || spec.correlation > 1.0)
    throw Error("SyntheticSpec: correlation must be in [0, 1]");
  if (spec.camera_shift_scale < 0.0 || spec.noise_sigma < 0.0)
    throw Error("SyntheticSpec: scales must be non-negative");
}

}  // namespace

// Held-out gallery/query sizes per identity are fixed plumbing constants;
// they draw from the same per-ID camera distribution as the train samples.
constexpr int kGalleryPerId = 2;
constexpr int kQueryPerId = 1;

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng code_rng(spec.seed, "synthetic/id_codes");
  Rng shift_rng(spec.seed, "synthetic/camera_shifts");
  Rng assign_rng(spec.seed, "synthetic/camera_assignments");
  Rng cam_rng(spec.seed, "synthetic/sample_cameras");
  Rng noise_rng(spec.seed, "synthetic/noise");

  std::vector<Vec> codes(static_cast<size_t>(spec.num_identities));
  for (auto& c : codes) {
    c = Vec(spec.id_dim);
    for (Eigen::Index j = 0; j < c.size(); ++j) c(j) = code_rng.normal();
  }
  std::vector<Vec> shifts(static_cast<size_t>(spec.num_cameras));
  for (auto& d : shifts) {
    d = Vec(spec.id_dim);
    for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = shift_rng.normal();
    const double n = d.norm();
    if (n > 0) d *= spec.camera_shift_scale / n;
  }
  std::vector<int> assigned(static_cast<size_t>(spec.num_identities));
  for (auto& a : assigned)
    a = static_cast<int>(assign_rng.uniform_int(0, spec.num_cameras - 1));

  std::vector<Sample> train, gallery, query;
  for (int id = 0; id < spec.num_identities; ++id) {
    const Vec& code = codes[static_cast<size_t>(id)];
    const int a = assigned[static_cast<size_t>(id)];
    for (int k = 0; k < spec.samples_per_id; ++k)
      train.push_back(make_sample(
          code, shifts, draw_camera(cam_rng, spec.correlation, a, spec.num_cameras),
          id, spec.noise_sigma, noise_rng));
    for (int k = 0; k < kGalleryPerId; ++k)
      gallery.push_back(make_sample(
          code, shifts, draw_camera(cam_rng, spec.correlation, a, spec.num_cameras),
          id, spec.noise_sigma, noise_rng));
    for (int k = 0; k < kQueryPerId; ++k)
      query.push_back(make_sample(
          code, shifts, draw_camera(cam_rng, spec.correlation, a, spec.num_cameras),
          id, spec.noise_sigma, noise_rng));
  }
  auto finalize = [&](std::vector<Sample>& v, SplitRole role) {
    for (size_t i = 0; i < v.size(); ++i) v[i].source_index = static_cast<int>(i);
    return DatasetSplit(std::move(v), role, spec.num_cameras,
                        spec.num_identities, PayloadKind::feature);
  };
  SyntheticData out;
  out.target_train = finalize(train, SplitRole::target_train);
  out.gallery = finalize(gallery, SplitRole::gallery);
  out.query = finalize(query, SplitRole::query);
  return out;
}

DatasetSplit generate_synthetic_source(const SyntheticSpec& spec) {
  SyntheticData d = generate_synthetic(spec);
  std::vector<Sample> samples = d.target_train.samples();
  return DatasetSplit(std::move(samples), SplitRole::source_train,
                      spec.num_cameras, spec.num_identities,
                      PayloadKind::feature);
}

DatasetSplit hide_labels(const DatasetSplit& split) {
  if (split.role() != SplitRole::target_train)
    throw IngestionError(fmt::format(
        "hide_labels requires a target_train split, got {}", to_string(split.role())));
  DatasetSplit out = split;
  out.sealed_ids_.clear();
  out.sealed_ids_.reserve(out.samples_.size());
  for (Sample& s : out.samples_) {
    out.sealed_ids_.push_back(s.person_id);
    s.person_id.reset();
  }
  out.labels_hidden_ = true;
  out.num_identities_.reset();
  return out;
}

Mat batch_matrix(const DatasetSplit& split, const std::vector<int>& indices) {
  const int dim = split.payload_dim();
  Mat out(static_cast<Eigen::Index>(indices.size()), dim);
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<size_t>(idx) >= split.size())
      throw Error(fmt::format("batch_matrix: index {} out of range", idx));
    out.row(static_cast<Eigen::Index>(i)) =
        split.samples()[static_cast<size_t>(idx)].payload.transpose();
  }
  return out;
}

Mat batch_matrix(const DatasetSplit& split) {
  std::vector<int> all(split.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return batch_matrix(split, all);
}

Mat hflip_batch(const Mat& batch, PayloadKind kind, const ImageShape& shape) {
  if (kind == PayloadKind::feature) return batch;
  if (batch.cols() != shape.size())
    throw Error("hflip_batch: shape does not match payload width");
  Mat out(batch.rows(), batch.cols());
  const int hw = shape.height * shape.width;
  for (Eigen::Index b = 0; b < batch.rows(); ++b)
    for (int c = 0; c < shape.channels; ++c)
      for (int y = 0; y < shape.height; ++y)
        for (int x = 0; x < shape.width; ++x)
          out(b, c * hw + y * shape.width + x) =
              batch(b, c * hw + y * shape.width + (shape.width - 1 - x));
  return out;
}

}  // namespace creid::data
