#pragma once

#include "creid/autodiff.hpp"
#include "creid/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace creid::adversary {

enum class MergeMode { sum, concat };

// How the min-max objective reaches the parameters.
//  gradient_reversal: one backward pass; discriminator parameters receive
//    +d(adv), the backbone receives -mu*d(adv) through the feature path and
//    exactly zero through the conditioning path.
//  alternating: a discriminator descent step on the adversarial loss with the
//    backbone frozen, then a backbone step on ps_id - mu*adv with the
//    discriminator frozen.
enum class GradientRouting { gradient_reversal, alternating };

std::string to_string(MergeMode m);
std::string to_string(GradientRouting r);
MergeMode merge_from_string(const std::string& s);
GradientRouting routing_from_string(const std::string& s);

struct DiscriminatorConfig {
  int feature_dim = 16;
  int hidden_dim = 1024;
  int num_cameras = 2;
  bool conditional = false;
  MergeMode merge = MergeMode::sum;
  // Head weights start near zero so an untrained discriminator is uniform.
  double head_init_scale = 1e-3;
};

// Camera classifier, optionally two-branch (feature + conditioning centroid).
// Branch layers are feature_dim->hidden with batch norm + ReLU, merged by
// elementwise sum (or concatenation), then hidden->hidden (BN+ReLU) and
// hidden->num_cameras with a softmax head. The conditioning input is detached
// from the autodiff graph inside forward().
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, uint64_t init_seed);

  const DiscriminatorConfig& config() const { return cfg_; }

  // Returns batch x K stochastic rows. `conditioning` must be present iff the
  // discriminator is conditional. `frozen` routes no gradient to
  // discriminator parameters (used by the alternating generator step).
  ad::Var forward(ad::Tape& t, ad::Var features,
                  std::optional<ad::Var> conditioning, bool training,
                  bool frozen = false);

  // Eval-mode probabilities.
  Mat predict(const Mat& features, const Mat* conditioning = nullptr);

  std::vector<ad::Parameter*> parameters();
  std::vector<nn::NamedParameter> named_parameters(const std::string& prefix);

  // Test hook: silences the conditioning branch exactly.
  void zero_conditioning_branch();

 private:
  DiscriminatorConfig cfg_;
  nn::Linear feat_in_;
  nn::BatchNorm1d feat_bn_;
  std::optional<nn::Linear> cond_in_;
  std::optional<nn::BatchNorm1d> cond_bn_;
  nn::Linear mid_;
  nn::BatchNorm1d mid_bn_;
  nn::Linear head_;
};

// Camera prediction accuracy of `probs` rows against camera labels.
double camera_accuracy(const Mat& probs, const std::vector<int>& cameras);

}  // namespace creid::adversary
