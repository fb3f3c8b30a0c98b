#include "creid/adversary.hpp"

#include <fmt/format.h>

namespace creid::adversary {

std::string to_string(MergeMode m) {
  return m == MergeMode::sum ? "sum" : "concat";
}

std::string to_string(GradientRouting r) {
  return r == GradientRouting::gradient_reversal ? "gradient_reversal"
                                                 : "alternating";
}

MergeMode merge_from_string(const std::string& s) {
  if (s == "sum") return MergeMode::sum;
  if (s == "concat") return MergeMode::concat;
  throw Error(fmt::format("unknown merge mode '{}'", s));
}

GradientRouting routing_from_string(const std::string& s) {
  if (s == "gradient_reversal") return GradientRouting::gradient_reversal;
  if (s == "alternating") return GradientRouting::alternating;
  throw Error(fmt::format("unknown gradient routing '{}'", s));
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, uint64_t init_seed)
    : cfg_(cfg) {
  if (cfg_.feature_dim < 1 || cfg_.hidden_dim < 1 || cfg_.num_cameras < 2)
    throw Error("Discriminator: bad dimensions");
  Rng rng(init_seed, "discriminator/init");
  feat_in_ = nn::Linear("disc.feat_in", cfg_.feature_dim, cfg_.hidden_dim, rng);
  feat_bn_ = nn::BatchNorm1d("disc.feat_bn", cfg_.hidden_dim);
  if (cfg_.conditional) {
    cond_in_.emplace("disc.cond_in", cfg_.feature_dim, cfg_.hidden_dim, rng);
    cond_bn_.emplace("disc.cond_bn", cfg_.hidden_dim);
  }
  const int mid_in = (cfg_.conditional && cfg_.merge == MergeMode::concat)
                         ? 2 * cfg_.hidden_dim
                         : cfg_.hidden_dim;
  mid_ = nn::Linear("disc.mid", mid_in, cfg_.hidden_dim, rng);
  mid_bn_ = nn::BatchNorm1d("disc.mid_bn", cfg_.hidden_dim);
  head_ = nn::Linear("disc.head", cfg_.hidden_dim, cfg_.num_cameras, rng,
                     cfg_.head_init_scale);
}

ad::Var Discriminator::forward(ad::Tape& t, ad::Var features,
                               std::optional<ad::Var> conditioning,
                               bool training, bool frozen) {
  if (cfg_.conditional && !conditioning)
    throw Error("conditional discriminator requires a conditioning input");
  if (!cfg_.conditional && conditioning)
    throw Error("plain discriminator accepts no conditioning input");
  if (t.value(features).cols() != cfg_.feature_dim)
    throw Error(fmt::format("discriminator expects {} feature columns, got {}",
                            cfg_.feature_dim, t.value(features).cols()));

  auto linear = [&](nn::Linear& l, ad::Var x) {
    return frozen ? l.forward_frozen(t, x) : l.forward(t, x);
  };
  auto bn = [&](nn::BatchNorm1d& b, ad::Var x) {
    return frozen ? b.forward_frozen(t, x, training)
                  : b.forward(t, x, training);
  };

  ad::Var f = t.relu(bn(feat_bn_, linear(feat_in_, features)));
  ad::Var merged = f;
  if (cfg_.conditional) {
    if (t.value(*conditioning).cols() != cfg_.feature_dim)
      throw Error("conditioning width mismatch");
    if (t.value(*conditioning).rows() != t.value(features).rows())
      throw Error("conditioning batch size mismatch");
    // The conditioning vector never carries gradient back to its producer.
    ad::Var cond = t.detach(*conditioning);
    ad::Var c = t.relu(bn(*cond_bn_, linear(*cond_in_, cond)));
    merged = cfg_.merge == MergeMode::sum ? t.add(f, c)
                                          : t.concat_cols({f, c});
  }
  ad::Var h = t.relu(bn(mid_bn_, linear(mid_, merged)));
  return t.softmax_rows(linear(head_, h));
}

Mat Discriminator::predict(const Mat& features, const Mat* conditioning) {
  ad::Tape t;
  std::optional<ad::Var> cond;
  if (conditioning) cond = t.input(*conditioning);
  return t.value(forward(t, t.input(features), cond, /*training=*/false,
                         /*frozen=*/true));
}

std::vector<ad::Parameter*> Discriminator::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto* p : feat_in_.parameters()) out.push_back(p);
  for (auto* p : feat_bn_.parameters()) out.push_back(p);
  if (cond_in_) {
    for (auto* p : cond_in_->parameters()) out.push_back(p);
    for (auto* p : cond_bn_->parameters()) out.push_back(p);
  }
  for (auto* p : mid_.parameters()) out.push_back(p);
  for (auto* p : mid_bn_.parameters()) out.push_back(p);
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

std::vector<nn::NamedParameter> Discriminator::named_parameters(
    const std::string& prefix) {
  std::vector<nn::NamedParameter> out;
  for (auto* p : parameters()) out.push_back({prefix + p->name, p});
  return out;
}

void Discriminator::zero_conditioning_branch() {
  if (!cond_in_) return;
  cond_in_->weight.value.setZero();
  cond_in_->bias.value.setZero();
  cond_bn_->gamma.value.setZero();
  cond_bn_->beta.value.setZero();
}

double camera_accuracy(const Mat& probs, const std::vector<int>& cameras) {
  if (probs.rows() != static_cast<Eigen::Index>(cameras.size()))
    throw Error("camera_accuracy: size mismatch");
  if (probs.rows() == 0) return 0.0;
  int hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index argmax = 0;
    probs.row(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == cameras[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace creid::adversary
