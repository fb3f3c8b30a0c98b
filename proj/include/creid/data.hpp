#pragma once

#include "creid/common.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace creid::eval {
class Diagnostics;
}

namespace creid::data {

enum class PayloadKind { image, feature };
enum class SplitRole { source_train, target_train, gallery, query };

std::string to_string(SplitRole role);

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  int size() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

// One detection image (or precomputed feature) with an optional person ID and
// a mandatory camera index. Image payloads are flattened channel-planar:
// index = c*H*W + y*W + x, values in [0, 1].
struct Sample {
  Vec payload;
  std::optional<int> person_id;
  int camera = 0;
  int source_index = 0;
  bool distractor = false;
};

class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(std::vector<Sample> samples, SplitRole role, int num_cameras,
               std::optional<int> num_identities, PayloadKind kind,
               ImageShape image_shape = {});

  const std::vector<Sample>& samples() const { return samples_; }
  size_t size() const { return samples_.size(); }
  SplitRole role() const { return role_; }
  int num_cameras() const { return num_cameras_; }
  std::optional<int> num_identities() const { return num_identities_; }
  PayloadKind payload_kind() const { return kind_; }
  const ImageShape& image_shape() const { return image_shape_; }
  int payload_dim() const;

  std::vector<int> cameras() const;
  // Visible person IDs (nullopt where hidden/absent).
  std::vector<std::optional<int>> visible_ids() const;

 private:
  friend class creid::eval::Diagnostics;
  friend DatasetSplit hide_labels(const DatasetSplit&);

  std::vector<Sample> samples_;
  SplitRole role_ = SplitRole::target_train;
  int num_cameras_ = 0;
  std::optional<int> num_identities_;
  PayloadKind kind_ = PayloadKind::feature;
  ImageShape image_shape_;
  // Populated by hide_labels; reachable only through eval::Diagnostics.
  std::vector<std::optional<int>> sealed_ids_;
  bool labels_hidden_ = false;
};

// Filename-driven ingestion descriptor. The default pattern matches the
// de-facto `<id>_c<camera>_<suffix>.<ext>` naming of standard re-ID layouts;
// camera indices in filenames are 1-based there.
struct DatasetLayout {
  std::string pattern = R"(^(-?\d+)_c(\d+))";
  int camera_index_base = 1;
  std::set<int> distractor_ids = {-1};
  // Images are resized to this shape on load and converted to unit-interval
  // grayscale (channels=1) or RGB (channels=3).
  ImageShape image_size{32, 16, 1};
};

// Loads a split from a directory. Image files (.jpg/.jpeg/.png/.bmp/.pgm/.ppm)
// become image payloads; .fv files (one float per line) become feature
// payloads. Ordering is lexicographic by filename.
DatasetSplit load_dataset_dir(const std::filesystem::path& dir,
                              const DatasetLayout& layout, SplitRole role);

// Writes a feature-payload split as .fv files a later load_dataset_dir call
// can ingest.
void write_split_dir(const DatasetSplit& split, const std::filesystem::path& dir);

// Synthetic multi-camera generator with a controllable ID<->camera
// correlation knob: per-ID camera distribution is
// (1-correlation)*uniform + correlation*one_hot(assigned camera).
struct SyntheticSpec {
  int num_identities = 16;
  int num_cameras = 4;
  int samples_per_id = 8;
  int id_dim = 16;
  double camera_shift_scale = 1.0;
  double correlation = 0.0;
  double noise_sigma = 0.1;
  uint64_t seed = 1;
};

struct SyntheticData {
  DatasetSplit target_train;
  DatasetSplit gallery;
  DatasetSplit query;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Same generator, emitted as an ID-annotated source training split.
DatasetSplit generate_synthetic_source(const SyntheticSpec& spec);

// Returns a copy whose samples expose no person_id; the original IDs move to
// a sealed channel readable only via eval::Diagnostics. Requires role
// target_train.
DatasetSplit hide_labels(const DatasetSplit& split);

// Stacks sample payloads into a (batch x payload_dim) matrix.
Mat batch_matrix(const DatasetSplit& split, const std::vector<int>& indices);
Mat batch_matrix(const DatasetSplit& split);

// Horizontal flip of every payload (image payloads flip along width; feature
// payloads are returned unchanged).
Mat hflip_batch(const Mat& batch, PayloadKind kind, const ImageShape& shape);

}  // namespace creid::data
