#pragma once

#include "creid/adversary.hpp"
#include "creid/autodiff.hpp"
#include "creid/embedding.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace creid::objectives {

inline constexpr double kLogFloor = 1e-12;    // CE probability clamp
inline constexpr double kDefaultMargin = 0.5; // triplet margin m

// A scalar loss with its graph node and a named breakdown. The value always
// equals the declared weighted sum of the parts (checked on construction).
struct Loss {
  ad::Var var;
  double value = 0.0;
  std::vector<std::pair<std::string, double>> parts;

  std::optional<double> part(const std::string& name) const;
};

// Mean over the batch of -log(<probs_row, one_hot(label)>), probabilities
// clamped at kLogFloor. Rows must be stochastic vectors.
Loss ce_id_loss(ad::Tape& t, ad::Var probs, std::span<const int> labels);

// Batch-hard triplet loss: per anchor, hardest (farthest) positive and
// hardest (closest) negative by L2 distance, hinge at `margin`.
Loss triplet_loss(ad::Tape& t, ad::Var features, std::span<const int> labels,
                  double margin = kDefaultMargin);

// ce + lambda * triplet. lambda == 0 skips the triplet term entirely (the
// "tri" part is then absent from the breakdown).
Loss id_loss(ad::Tape& t, ad::Var probs, ad::Var features,
             std::span<const int> labels, double lambda,
             double margin = kDefaultMargin);

// Cross-entropy of discriminator probabilities against camera labels.
Loss camera_adv_loss(ad::Tape& t, ad::Var disc_probs,
                     std::span<const int> cameras);

// Cross-entropy of D(features, centroid) against camera labels. Each row of
// `centroids` is the cluster centroid assigned to the matching feature row;
// the discriminator detaches the conditioning internally, so the gradient
// w.r.t. the centroid input is identically zero.
Loss conditional_camera_adv_loss(ad::Tape& t, adversary::Discriminator& disc,
                                 ad::Var features, ad::Var centroids,
                                 std::span<const int> cameras, bool training,
                                 bool frozen = false);

// The min-max split of Eq-style objectives: the generator minimizes
// ps_id - mu*adv, the discriminator minimizes adv.
struct AdversarialObjective {
  double generator_objective = 0.0;
  double discriminator_objective = 0.0;
};
AdversarialObjective adversarial_objective(double ps_id_value, double adv_value,
                                           double mu);

// ----- Compositions -----------------------------------------------------

// One branch of the multi-branch composition: that branch's features and
// pseudo labels plus the shared conditioning centroids (full-body branch) and
// camera labels. A missing discriminator is an error when mu > 0.
struct BranchBatch {
  embedding::Branch branch;
  ad::Var features;
  std::vector<int> pseudo_labels;
  ad::Var conditioning;          // full-branch centroids, row-aligned
  std::vector<int> cameras;
  adversary::Discriminator* discriminator = nullptr;
};

// How adversarial losses enter the composed objective graph.
//  reversed:  features pass a -mu gradient-reversal into the discriminator
//             and the adversarial CE is *added*; one backward trains both
//             sides (generator gets -mu*d(adv), discriminator gets +d(adv)).
//  generator_only: frozen discriminator, objective subtracts mu*adv
//             (the backbone half of the alternating schedule).
enum class AdvGraphMode { reversed, generator_only };

struct ComposedObjectives {
  ad::Var train_objective;   // scalar to backward()
  double ps_id_value = 0.0;  // summed pseudo-ID losses
  double adv_value = 0.0;    // summed adversarial CE losses
  AdversarialObjective minmax;
  std::vector<std::pair<std::string, double>> parts;
};

// Multi-branch composition: per-branch triplet pseudo-ID losses summed, each
// branch feeding its own camera discriminator, all conditioned by the
// full-body centroids, every adversarial part weighted by the same mu.
ComposedObjectives ssg_composition(ad::Tape& t,
                                   std::vector<BranchBatch>& branches,
                                   double mu, double margin, bool conditional,
                                   AdvGraphMode mode, bool training);

// One model's batch: features, pseudo-ID head output, labels, and the
// adversarial inputs.
struct PairMemberBatch {
  ad::Var features;
  ad::Var probs;                 // pseudo-ID head output
  std::vector<int> pseudo_labels;
  ad::Var conditioning;
  std::vector<int> cameras;
  adversary::Discriminator* discriminator = nullptr;
};

// Single-model composition: pseudo-ID loss (CE + lambda*triplet) minus
// mu times one (conditional) camera loss.
ComposedObjectives single_composition(ad::Tape& t, PairMemberBatch& member,
                                      double mu, double lambda, double margin,
                                      bool conditional, AdvGraphMode mode,
                                      bool training);

// Dual-model composition: both models' pseudo-ID losses (hard CE + triplet)
// summed, minus mu times both conditional camera losses.
ComposedObjectives mmt_composition(ad::Tape& t, PairMemberBatch& member_1,
                                   PairMemberBatch& member_2, double mu,
                                   double lambda, double margin,
                                   bool conditional, AdvGraphMode mode,
                                   bool training);

}  // namespace creid::objectives
