#include "creid/objectives.hpp"

#include <cmath>

#include <fmt/format.h>

namespace creid::objectives {

std::optional<double> Loss::part(const std::string& name) const {
  for (const auto& [k, v] : parts)
    if (k == name) return v;
  return std::nullopt;
}

namespace {

void check_stochastic_rows(const Mat& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs.row(i).minCoeff() < -1e-9)
      throw Error(fmt::format("row {} has a negative probability", i));
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-5)
      throw Error(fmt::format("row {} does not sum to 1 (sum={})", i,
                              probs.row(i).sum()));
  }
}

Mat one_hot(std::span<const int> labels, Eigen::Index classes) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw Error(fmt::format("label {} outside [0, {})", labels[i], classes));
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

Loss cross_entropy(ad::Tape& t, ad::Var probs, std::span<const int> labels,
                   const char* part_name) {
  const Mat& p = t.value(probs);
  if (p.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error("cross_entropy: batch size mismatch");
  if (p.rows() == 0) throw Error("cross_entropy: empty batch");
  check_stochastic_rows(p);
  ad::Var hot = t.input(one_hot(labels, p.cols()));
  ad::Var picked = t.sum_rows(t.mul(probs, hot));
  ad::Var loss = t.scale(t.mean_all(t.log_clamped(picked, kLogFloor)), -1.0);
  Loss out;
  out.var = loss;
  out.value = t.value(loss)(0, 0);
  out.parts = {{part_name, out.value}};
  return out;
}

}  // namespace

Loss ce_id_loss(ad::Tape& t, ad::Var probs, std::span<const int> labels) {
  return cross_entropy(t, probs, labels, "ce");
}

Loss camera_adv_loss(ad::Tape& t, ad::Var disc_probs,
                     std::span<const int> cameras) {
  return cross_entropy(t, disc_probs, cameras, "adv");
}

Loss triplet_loss(ad::Tape& t, ad::Var features, std::span<const int> labels,
                  double margin) {
  const Mat& f = t.value(features);
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (f.rows() != n) throw Error("triplet_loss: batch size mismatch");
  if (n < 3) throw SamplerError("triplet_loss: batch too small for triplets");

  // Hardest-example mining happens on values; only the selected distances
  // enter the graph.
  Mat dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (f.row(i) - f.row(j)).norm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  std::vector<int> pos_idx(static_cast<size_t>(n)), neg_idx(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int best_pos = -1, best_neg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        if (best_pos < 0 || dist(i, j) > dist(i, best_pos)) best_pos = static_cast<int>(j);
      } else {
        if (best_neg < 0 || dist(i, j) < dist(i, best_neg)) best_neg = static_cast<int>(j);
      }
    }
    if (best_pos < 0)
      throw SamplerError(fmt::format(
          "triplet_loss: anchor {} (label {}) has no positive in the batch; "
          "the batch sampler must provide >= 2 instances per identity",
          i, labels[static_cast<size_t>(i)]));
    if (best_neg < 0)
      throw SamplerError(fmt::format(
          "triplet_loss: anchor {} (label {}) has no negative in the batch; "
          "the batch sampler must provide >= 2 identities",
          i, labels[static_cast<size_t>(i)]));
    pos_idx[static_cast<size_t>(i)] = best_pos;
    neg_idx[static_cast<size_t>(i)] = best_neg;
  }

  ad::Var pos = t.gather_rows(features, pos_idx);
  ad::Var neg = t.gather_rows(features, neg_idx);
  ad::Var d_ap = t.sqrt_safe(t.sum_rows(t.square(t.sub(features, pos))));
  ad::Var d_an = t.sqrt_safe(t.sum_rows(t.square(t.sub(features, neg))));
  ad::Var hinge = t.relu(t.add_scalar(t.sub(d_ap, d_an), margin));
  ad::Var loss = t.mean_all(hinge);

  Loss out;
  out.var = loss;
  out.value = t.value(loss)(0, 0);
  out.parts = {{"tri", out.value}};
  return out;
}

Loss id_loss(ad::Tape& t, ad::Var probs, ad::Var features,
             std::span<const int> labels, double lambda, double margin) {
  Loss ce = ce_id_loss(t, probs, labels);
  Loss out;
  if (lambda == 0.0) {
    // Triplet term skipped entirely; it never appears in the breakdown.
    out.var = ce.var;
    out.value = ce.value;
    out.parts = {{"ce", ce.value}};
    return out;
  }
  Loss tri = triplet_loss(t, features, labels, margin);
  out.var = t.add(ce.var, t.scale(tri.var, lambda));
  out.value = t.value(out.var)(0, 0);
  out.parts = {{"ce", ce.value}, {"tri", tri.value}};
  const double declared = ce.value + lambda * tri.value;
  if (std::abs(out.value - declared) > 1e-6)
    throw Error("id_loss: breakdown does not reproduce the total");
  return out;
}

Loss conditional_camera_adv_loss(ad::Tape& t, adversary::Discriminator& disc,
                                 ad::Var features, ad::Var centroids,
                                 std::span<const int> cameras, bool training,
                                 bool frozen) {
  if (!disc.config().conditional)
    throw Error("conditional_camera_adv_loss needs a conditional discriminator");
  if (t.value(centroids).rows() != t.value(features).rows())
    throw Error(
        "conditional_camera_adv_loss: every sample needs its assigned "
        "centroid (row counts differ)");
  ad::Var probs = disc.forward(t, features, centroids, training, frozen);
  Loss out = camera_adv_loss(t, probs, cameras);
  return out;
}

AdversarialObjective adversarial_objective(double ps_id_value, double adv_value,
                                           double mu) {
  if (mu < 0.0) throw Error("adversarial_objective: mu must be >= 0");
  return {ps_id_value - mu * adv_value, adv_value};
}

namespace {

// Adds the adversarial CE for one discriminator to the graph under the
// requested routing and returns its Loss.
Loss adversarial_part(ad::Tape& t, adversary::Discriminator& disc,
                      ad::Var features, ad::Var conditioning,
                      std::span<const int> cameras, double mu, bool conditional,
                      AdvGraphMode mode, bool training) {
  const bool frozen = mode == AdvGraphMode::generator_only;
  ad::Var feat_in = mode == AdvGraphMode::reversed
                        ? t.reverse_grad(features, mu)
                        : features;
  if (conditional)
    return conditional_camera_adv_loss(t, disc, feat_in, conditioning, cameras,
                                       training, frozen);
  ad::Var probs = disc.forward(t, feat_in, std::nullopt, training, frozen);
  return camera_adv_loss(t, probs, cameras);
}

// Combines pseudo-ID scalar and adversarial scalars into the scalar the
// caller will backward() on.
ad::Var combine(ad::Tape& t, ad::Var ps_id, const std::vector<ad::Var>& advs,
                double mu, AdvGraphMode mode) {
  ad::Var total = ps_id;
  for (ad::Var a : advs) {
    // reversed: add, the reversal layer carries the -mu for the generator and
    // the discriminator descends the plain CE.
    // generator_only: subtract mu*adv, discriminator frozen. At mu == 0 the
    // term contributes nothing and is skipped so the graph reduces exactly to
    // the baseline objective.
    if (mode == AdvGraphMode::generator_only && mu == 0.0) continue;
    total = mode == AdvGraphMode::reversed ? t.add(total, a)
                                           : t.add(total, t.scale(a, -mu));
  }
  return total;
}

}  // namespace

ComposedObjectives ssg_composition(ad::Tape& t,
                                   std::vector<BranchBatch>& branches,
                                   double mu, double margin, bool conditional,
                                   AdvGraphMode mode, bool training) {
  if (mu < 0.0) throw Error("ssg_composition: mu must be >= 0");
  if (branches.size() != 3)
    throw Error(fmt::format("ssg_composition expects 3 branches, got {}",
                            branches.size()));

  ComposedObjectives out;
  ad::Var ps_id;
  for (BranchBatch& b : branches) {
    Loss tri = triplet_loss(t, b.features, b.pseudo_labels, margin);
    out.ps_id_value += tri.value;
    out.parts.emplace_back(
        fmt::format("tri/{}", embedding::to_string(b.branch)), tri.value);
    ps_id = ps_id.valid() ? t.add(ps_id, tri.var) : tri.var;
  }

  std::vector<ad::Var> advs;
  const bool with_adv = branches.front().discriminator != nullptr;
  for (BranchBatch& b : branches) {
    if (!with_adv) {
      if (b.discriminator)
        throw Error("ssg_composition: either all branches carry a "
                    "discriminator or none does");
      continue;
    }
    if (!b.discriminator)
      throw Error(fmt::format("ssg_composition: branch {} lacks a discriminator",
                              embedding::to_string(b.branch)));
    Loss adv = adversarial_part(t, *b.discriminator, b.features, b.conditioning,
                                b.cameras, mu, conditional, mode, training);
    out.adv_value += adv.value;
    out.parts.emplace_back(
        fmt::format("adv/{}", embedding::to_string(b.branch)), adv.value);
    advs.push_back(adv.var);
  }

  out.train_objective = combine(t, ps_id, advs, mu, mode);
  out.minmax = adversarial_objective(out.ps_id_value, out.adv_value, mu);
  return out;
}

ComposedObjectives single_composition(ad::Tape& t, PairMemberBatch& member,
                                      double mu, double lambda, double margin,
                                      bool conditional, AdvGraphMode mode,
                                      bool training) {
  if (mu < 0.0) throw Error("single_composition: mu must be >= 0");
  ComposedObjectives out;
  Loss l = id_loss(t, member.probs, member.features, member.pseudo_labels,
                   lambda, margin);
  out.ps_id_value = l.value;
  out.parts.emplace_back("ps_id", l.value);
  for (const auto& [k, v] : l.parts) out.parts.emplace_back(k, v);

  std::vector<ad::Var> advs;
  if (member.discriminator) {
    Loss adv = adversarial_part(t, *member.discriminator, member.features,
                                member.conditioning, member.cameras, mu,
                                conditional, mode, training);
    out.adv_value = adv.value;
    out.parts.emplace_back("adv", adv.value);
    advs.push_back(adv.var);
  }
  out.train_objective = combine(t, l.var, advs, mu, mode);
  out.minmax = adversarial_objective(out.ps_id_value, out.adv_value, mu);
  return out;
}

ComposedObjectives mmt_composition(ad::Tape& t, PairMemberBatch& member_1,
                                   PairMemberBatch& member_2, double mu,
                                   double lambda, double margin,
                                   bool conditional, AdvGraphMode mode,
                                   bool training) {
  if (mu < 0.0) throw Error("mmt_composition: mu must be >= 0");

  ComposedObjectives out;
  ad::Var ps_id;
  int index = 1;
  for (PairMemberBatch* m : {&member_1, &member_2}) {
    Loss l = id_loss(t, m->probs, m->features, m->pseudo_labels, lambda, margin);
    out.ps_id_value += l.value;
    out.parts.emplace_back(fmt::format("ps_id/m{}", index), l.value);
    for (const auto& [k, v] : l.parts)
      out.parts.emplace_back(fmt::format("{}/m{}", k, index), v);
    ps_id = ps_id.valid() ? t.add(ps_id, l.var) : l.var;
    ++index;
  }

  std::vector<ad::Var> advs;
  const bool with_adv = member_1.discriminator != nullptr;
  if (with_adv != (member_2.discriminator != nullptr))
    throw Error("mmt_composition: both members need a discriminator, or neither");
  if (with_adv) {
    index = 1;
    for (PairMemberBatch* m : {&member_1, &member_2}) {
      Loss adv = adversarial_part(t, *m->discriminator, m->features,
                                  m->conditioning, m->cameras, mu, conditional,
                                  mode, training);
      out.adv_value += adv.value;
      out.parts.emplace_back(fmt::format("adv/m{}", index), adv.value);
      advs.push_back(adv.var);
      ++index;
    }
  }

  out.train_objective = combine(t, ps_id, advs, mu, mode);
  out.minmax = adversarial_objective(out.ps_id_value, out.adv_value, mu);
  return out;
}

}  // namespace creid::objectives
