#pragma once

#include "creid/autodiff.hpp"
#include "creid/data.hpp"
#include "creid/nn.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace creid::embedding {

enum class Branch { full, upper, lower };

inline constexpr std::array<Branch, 3> kAllBranches = {Branch::full, Branch::upper,
                                                       Branch::lower};
std::string to_string(Branch b);
Branch branch_from_string(const std::string& s);

struct ModelConfig {
  data::PayloadKind payload = data::PayloadKind::feature;
  data::ImageShape image_shape{16, 8, 1};  // image payloads only
  int input_dim = 16;                      // feature payloads only
  int feature_dim = 16;                    // d: width of every branch output
  int conv_hidden = 8;                     // first conv width (images)
  int mlp_hidden = 32;                     // hidden width (vectors)
  int map_rows = 2;                        // spatial rows of the MLP pseudo-map
};

// Splits a flattened spatial map into full / upper / lower pooled vectors.
// Requires an even spatial height.
struct BranchVectors {
  Mat full, upper, lower;
};
BranchVectors split_branches(const Mat& feature_maps, const ad::MapShape& shape);

// Feature extractor with full/upper/lower pooled branch heads and optional
// classifier heads. The backbone is a small strided CNN for image payloads or
// an MLP producing a (map_rows x 1 x d) pseudo-map for feature payloads;
// larger backbones plug in behind the same interface.
class EmbeddingModel {
 public:
  EmbeddingModel(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const ad::MapShape& map_shape() const { return map_shape_; }
  int feature_dim() const { return cfg_.feature_dim; }

  // Backbone forward producing the flattened spatial map.
  ad::Var backbone(ad::Tape& t, ad::Var in);
  // Backbone + branch pooling. Differentiable w.r.t. model parameters.
  ad::Var embed(ad::Tape& t, ad::Var in, Branch branch);

  // Deterministic no-grad forward for a batch of samples.
  Mat embed_eval(const Mat& batch_inputs, Branch branch);
  Mat embed_eval(const data::DatasetSplit& split, const std::vector<int>& indices,
                 Branch branch);

  // Classifier heads; outputs are stochastic rows (softmax).
  void set_id_classifier(int num_classes, uint64_t seed);
  bool has_id_classifier() const { return id_head_.has_value(); }
  ad::Var id_probs(ad::Tape& t, ad::Var features);

  // The pseudo-ID head is reallocated (fresh parameters) whenever the cluster
  // count changes across epochs.
  void reallocate_pseudo_head(int num_classes, uint64_t seed);
  bool has_pseudo_head() const { return pseudo_head_.has_value(); }
  int pseudo_classes() const;
  ad::Var pseudo_probs(ad::Tape& t, ad::Var features);

  void check_payload(const data::DatasetSplit& split) const;

  // Backbone + id head; the pseudo head is transient and excluded.
  std::vector<ad::Parameter*> parameters();
  std::vector<nn::NamedParameter> named_parameters();
  std::vector<ad::Parameter*> backbone_parameters();
  std::vector<ad::Parameter*> pseudo_head_parameters();
  std::vector<ad::Parameter*> trainable_parameters();  // includes pseudo head

  // Order-stable hash of all persistent parameter bytes.
  uint64_t parameter_fingerprint() const;

 private:
  ModelConfig cfg_;
  ad::MapShape map_shape_;
  // Image backbone.
  std::optional<nn::Conv2d> conv1_, conv2_;
  // Vector backbone.
  std::optional<nn::Linear> fc1_, fc2_;
  std::optional<nn::Linear> id_head_;
  std::optional<nn::Linear> pseudo_head_;
};

// Two models with independent parameters and independent initial seeds.
struct ModelPair {
  std::unique_ptr<EmbeddingModel> model_1;
  std::unique_ptr<EmbeddingModel> model_2;

  ModelPair(const ModelConfig& cfg, uint64_t seed_1, uint64_t seed_2);
};

enum class EvalFeatureMode { ssg, mmt };

// Evaluation-time features. ssg: per branch, feature(x) + feature(hflip x),
// L2-normalized, branches concatenated (3d). mmt: raw branch-F features (d).
Mat eval_features(EmbeddingModel& model, const data::DatasetSplit& split,
                  const std::vector<int>& indices, EvalFeatureMode mode);
Mat eval_features(ModelPair& pair, const data::DatasetSplit& split,
                  const std::vector<int>& indices, EvalFeatureMode mode);

}  // namespace creid::embedding
