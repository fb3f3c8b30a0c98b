#include "creid/embedding.hpp"

#include <fmt/format.h>

namespace creid::embedding {

std::string to_string(Branch b) {
  switch (b) {
    case Branch::full: return "F";
    case Branch::upper: return "U";
    case Branch::lower: return "L";
  }
  return "?";
}

Branch branch_from_string(const std::string& s) {
  if (s == "F" || s == "full") return Branch::full;
  if (s == "U" || s == "upper") return Branch::upper;
  if (s == "L" || s == "lower") return Branch::lower;
  throw Error(fmt::format("unknown branch '{}'", s));
}

BranchVectors split_branches(const Mat& feature_maps, const ad::MapShape& shape) {
  if (shape.height % 2 != 0)
    throw Error(fmt::format("split_branches: spatial height {} must be even",
                            shape.height));
  if (feature_maps.cols() != shape.size())
    throw Error("split_branches: map width does not match shape");
  ad::Tape t;
  ad::Var in = t.input(feature_maps);
  BranchVectors out;
  out.full = t.value(t.pool_region(in, shape, 0, shape.height));
  out.upper = t.value(t.pool_region(in, shape, 0, shape.height / 2));
  out.lower = t.value(t.pool_region(in, shape, shape.height / 2, shape.height));
  return out;
}

EmbeddingModel::EmbeddingModel(const ModelConfig& cfg, uint64_t init_seed)
    : cfg_(cfg) {
  Rng rng(init_seed, "embedding/init");
  if (cfg_.feature_dim < 1) throw Error("EmbeddingModel: feature_dim must be >= 1");
  if (cfg_.payload == data::PayloadKind::image) {
    const auto& is = cfg_.image_shape;
    if (is.height % 8 != 0 || is.width % 4 != 0 || is.height < 8 || is.width < 4)
      throw Error(fmt::format(
          "EmbeddingModel: image {}x{} must have height divisible by 8 and "
          "width by 4 so the feature map keeps an even height",
          is.height, is.width));
    ad::ConvSpec c1{is.channels, cfg_.conv_hidden, is.height, is.width, 2, 2};
    conv1_.emplace("backbone.conv1", c1, rng);
    ad::ConvSpec c2{cfg_.conv_hidden, cfg_.feature_dim, c1.out_height(),
                    c1.out_width(), 2, 2};
    conv2_.emplace("backbone.conv2", c2, rng);
    map_shape_ = {c2.out_height(), c2.out_width(), cfg_.feature_dim};
  } else {
    if (cfg_.input_dim < 1) throw Error("EmbeddingModel: input_dim must be >= 1");
    if (cfg_.map_rows < 2 || cfg_.map_rows % 2 != 0)
      throw Error("EmbeddingModel: map_rows must be even and >= 2");
    fc1_.emplace("backbone.fc1", cfg_.input_dim, cfg_.mlp_hidden, rng);
    fc2_.emplace("backbone.fc2", cfg_.mlp_hidden,
                 cfg_.map_rows * cfg_.feature_dim, rng);
    map_shape_ = {cfg_.map_rows, 1, cfg_.feature_dim};
  }
}

ad::Var EmbeddingModel::backbone(ad::Tape& t, ad::Var in) {
  if (cfg_.payload == data::PayloadKind::image) {
    ad::Var h = t.relu(conv1_->forward(t, in));
    return conv2_->forward(t, h);
  }
  ad::Var h = t.relu(fc1_->forward(t, in));
  // fc2 output is interpreted channel-planar: column index = c*map_rows + y.
  return fc2_->forward(t, h);
}

ad::Var EmbeddingModel::embed(ad::Tape& t, ad::Var in, Branch branch) {
  ad::Var map = backbone(t, in);
  const int h = map_shape_.height;
  switch (branch) {
    case Branch::full: return t.pool_region(map, map_shape_, 0, h);
    case Branch::upper: return t.pool_region(map, map_shape_, 0, h / 2);
    case Branch::lower: return t.pool_region(map, map_shape_, h / 2, h);
  }
  throw Error("embed: unknown branch");
}

Mat EmbeddingModel::embed_eval(const Mat& batch_inputs, Branch branch) {
  if (batch_inputs.rows() == 0)
    return Mat(0, cfg_.feature_dim);
  ad::Tape t;
  return t.value(embed(t, t.input(batch_inputs), branch));
}

Mat EmbeddingModel::embed_eval(const data::DatasetSplit& split,
                               const std::vector<int>& indices, Branch branch) {
  check_payload(split);
  return embed_eval(data::batch_matrix(split, indices), branch);
}

void EmbeddingModel::set_id_classifier(int num_classes, uint64_t seed) {
  if (num_classes < 2) throw Error("id classifier needs >= 2 classes");
  Rng rng(seed, "embedding/id_head");
  id_head_.emplace("id_head", cfg_.feature_dim, num_classes, rng);
}

ad::Var EmbeddingModel::id_probs(ad::Tape& t, ad::Var features) {
  if (!id_head_) throw Error("model has no ID classifier head");
  return t.softmax_rows(id_head_->forward(t, features));
}

void EmbeddingModel::reallocate_pseudo_head(int num_classes, uint64_t seed) {
  if (num_classes < 1) throw Error("pseudo head needs >= 1 class");
  Rng rng(seed, "embedding/pseudo_head");
  pseudo_head_.emplace("pseudo_head", cfg_.feature_dim, num_classes, rng);
}

int EmbeddingModel::pseudo_classes() const {
  return pseudo_head_ ? static_cast<int>(pseudo_head_->weight.cols()) : 0;
}

ad::Var EmbeddingModel::pseudo_probs(ad::Tape& t, ad::Var features) {
  if (!pseudo_head_) throw Error("model has no pseudo-ID head");
  return t.softmax_rows(pseudo_head_->forward(t, features));
}

void EmbeddingModel::check_payload(const data::DatasetSplit& split) const {
  if (split.payload_kind() != cfg_.payload)
    throw Error("payload kind mismatch between model and dataset split");
  const int expected = cfg_.payload == data::PayloadKind::image
                           ? cfg_.image_shape.size()
                           : cfg_.input_dim;
  if (split.size() > 0 && split.payload_dim() != expected)
    throw Error(fmt::format("payload dimension mismatch: split {} vs model {}",
                            split.payload_dim(), expected));
}

std::vector<ad::Parameter*> EmbeddingModel::backbone_parameters() {
  std::vector<ad::Parameter*> out;
  for (auto* layer : {conv1_ ? &*conv1_ : nullptr, conv2_ ? &*conv2_ : nullptr})
    if (layer)
      for (auto* p : layer->parameters()) out.push_back(p);
  for (auto* layer : {fc1_ ? &*fc1_ : nullptr, fc2_ ? &*fc2_ : nullptr})
    if (layer)
      for (auto* p : layer->parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> EmbeddingModel::pseudo_head_parameters() {
  std::vector<ad::Parameter*> out;
  if (pseudo_head_)
    for (auto* p : pseudo_head_->parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> EmbeddingModel::parameters() {
  auto out = backbone_parameters();
  if (id_head_)
    for (auto* p : id_head_->parameters()) out.push_back(p);
  return out;
}

std::vector<nn::NamedParameter> EmbeddingModel::named_parameters() {
  std::vector<nn::NamedParameter> out;
  for (auto* p : parameters()) out.push_back({p->name, p});
  return out;
}

std::vector<ad::Parameter*> EmbeddingModel::trainable_parameters() {
  auto out = parameters();
  if (pseudo_head_)
    for (auto* p : pseudo_head_->parameters()) out.push_back(p);
  return out;
}

uint64_t EmbeddingModel::parameter_fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto* self = const_cast<EmbeddingModel*>(this);
  for (auto* p : self->parameters())
    h = fnv1a(p->value.data(),
              static_cast<size_t>(p->value.size()) * sizeof(double), h);
  return h;
}

ModelPair::ModelPair(const ModelConfig& cfg, uint64_t seed_1, uint64_t seed_2) {
  if (seed_1 == seed_2)
    throw Error("ModelPair: the two models need distinct init seeds");
  model_1 = std::make_unique<EmbeddingModel>(cfg, seed_1);
  model_2 = std::make_unique<EmbeddingModel>(cfg, seed_2);
}

namespace {

Mat normalize_rows(const Mat& m, double eps = 1e-12) {
  Mat out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > eps) out.row(i) /= n;
  }
  return out;
}

Mat ssg_features(EmbeddingModel& model, const data::DatasetSplit& split,
                 const std::vector<int>& indices) {
  const Mat batch = data::batch_matrix(split, indices);
  const Mat flipped =
      data::hflip_batch(batch, split.payload_kind(), split.image_shape());
  std::vector<Mat> blocks;
  for (Branch b : kAllBranches) {
    Mat sum = model.embed_eval(batch, b) + model.embed_eval(flipped, b);
    blocks.push_back(normalize_rows(sum));
  }
  Mat out(batch.rows(), 3 * model.feature_dim());
  out << blocks[0], blocks[1], blocks[2];
  return out;
}

}  // namespace

Mat eval_features(EmbeddingModel& model, const data::DatasetSplit& split,
                  const std::vector<int>& indices, EvalFeatureMode mode) {
  model.check_payload(split);
  if (mode == EvalFeatureMode::ssg) return ssg_features(model, split, indices);
  return model.embed_eval(split, indices, Branch::full);
}

Mat eval_features(ModelPair& pair, const data::DatasetSplit& split,
                  const std::vector<int>& indices, EvalFeatureMode mode) {
  if (mode == EvalFeatureMode::ssg) {
    // Branch composition belongs to the single-model configuration; a pair
    // still reduces to averaged per-model features.
    Mat a = ssg_features(*pair.model_1, split, indices);
    Mat b = ssg_features(*pair.model_2, split, indices);
    return 0.5 * (a + b);
  }
  Mat a = pair.model_1->embed_eval(split, indices, Branch::full);
  Mat b = pair.model_2->embed_eval(split, indices, Branch::full);
  return 0.5 * (a + b);
}

}  // namespace creid::embedding
