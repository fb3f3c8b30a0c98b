#include "creid/training.hpp"

#include "creid/objectives.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>

#include <fmt/format.h>

namespace creid::train {

using adversary::Discriminator;
using adversary::DiscriminatorConfig;
using adversary::GradientRouting;
using clustering::PseudoLabeling;
using data::DatasetSplit;
using embedding::Branch;
using embedding::EmbeddingModel;

eval::DiagnosticRecord EpochReport::diagnostic_record() const {
  eval::DiagnosticRecord r;
  r.epoch = epoch;
  r.mutual_information_nats = mi_pseudo_camera;
  r.lost_ids = lost_ids;
  r.cluster_count = cluster_count;
  r.camera_accuracy_probe = camera_probe_accuracy;
  return r;
}

embedding::ModelConfig model_config_from(const ExperimentConfig& cfg) {
  embedding::ModelConfig mc;
  mc.payload = cfg.payload;
  mc.image_shape = {cfg.image_height, cfg.image_width, cfg.image_channels};
  mc.input_dim = cfg.input_dim;
  mc.feature_dim = cfg.feature_dim;
  mc.conv_hidden = cfg.conv_hidden;
  mc.mlp_hidden = cfg.mlp_hidden;
  mc.map_rows = cfg.map_rows;
  return mc;
}

ModelSet ModelSet::create(const ExperimentConfig& cfg) {
  ModelSet out;
  const auto mc = model_config_from(cfg);
  if (cfg.composition == Composition::mmt) {
    out.pair_ = std::make_unique<embedding::ModelPair>(
        mc, derive_seed(cfg.seed, "model/m1"), derive_seed(cfg.seed, "model/m2"));
  } else {
    out.single_ =
        std::make_unique<EmbeddingModel>(mc, derive_seed(cfg.seed, "model/m1"));
  }
  return out;
}

EmbeddingModel& ModelSet::model(int i) {
  if (pair_) {
    if (i == 0) return *pair_->model_1;
    if (i == 1) return *pair_->model_2;
  } else if (i == 0) {
    return *single_;
  }
  throw Error(fmt::format("ModelSet: no model {}", i));
}

embedding::ModelPair& ModelSet::pair() {
  if (!pair_) throw Error("ModelSet holds a single model, not a pair");
  return *pair_;
}

std::vector<nn::NamedParameter> ModelSet::named_parameters() {
  std::vector<nn::NamedParameter> out;
  for (int i = 0; i < model_count(); ++i)
    for (auto& np : model(i).named_parameters())
      out.push_back({fmt::format("m{}.{}", i + 1, np.name), np.param});
  return out;
}

uint64_t ModelSet::parameter_fingerprint() const {
  auto* self = const_cast<ModelSet*>(this);
  uint64_t h = 0xcbf29ce484222325ull;
  for (int i = 0; i < self->model_count(); ++i) {
    const uint64_t f = self->model(i).parameter_fingerprint();
    h = fnv1a(&f, sizeof(f), h);
  }
  return h;
}

Mat ModelSet::eval_features(const DatasetSplit& split, Composition composition) {
  std::vector<int> all(split.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  if (composition == Composition::ssg)
    return embedding::eval_features(primary(), split, all,
                                    embedding::EvalFeatureMode::ssg);
  if (composition == Composition::mmt)
    return embedding::eval_features(pair(), split, all,
                                    embedding::EvalFeatureMode::mmt);
  return embedding::eval_features(primary(), split, all,
                                  embedding::EvalFeatureMode::mmt);
}

DataBundle load_data(const ExperimentConfig& cfg) {
  DataBundle out;
  if (cfg.data_kind == harness::DataKind::synthetic) {
    data::SyntheticData synth = data::generate_synthetic(cfg.target_synth);
    out.source = data::generate_synthetic_source(cfg.source_synth);
    out.target_train = data::hide_labels(synth.target_train);
    out.gallery = std::move(synth.gallery);
    out.query = std::move(synth.query);
    return out;
  }
  data::SplitRole role = data::SplitRole::target_train;
  DatasetSplit target =
      data::load_dataset_dir(cfg.dir_train, cfg.layout, role);
  out.target_train = data::hide_labels(target);
  out.gallery = data::load_dataset_dir(cfg.dir_gallery, cfg.layout,
                                       data::SplitRole::gallery);
  out.query =
      data::load_dataset_dir(cfg.dir_query, cfg.layout, data::SplitRole::query);
  if (!cfg.dir_source.empty())
    out.source = data::load_dataset_dir(cfg.dir_source, cfg.layout,
                                        data::SplitRole::source_train);
  return out;
}

std::vector<int> pk_sample(const std::vector<int>& sample_indices,
                           const std::vector<int>& labels, int p, int k,
                           Rng& rng) {
  if (sample_indices.size() != labels.size())
    throw Error("pk_sample: indices/labels size mismatch");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(sample_indices[i]);
  const int available = static_cast<int>(by_class.size());
  if (available < 2)
    throw SamplerError(fmt::format(
        "pk_sample: need >= 2 classes for triplet batches, got {}", available));

  std::vector<int> class_ids;
  class_ids.reserve(by_class.size());
  for (const auto& [c, v] : by_class) class_ids.push_back(c);
  const int take = std::min(p, available);
  std::vector<int> chosen = rng.sample_without_replacement(available, take);

  std::vector<int> batch;
  batch.reserve(static_cast<size_t>(take) * static_cast<size_t>(k));
  for (int ci : chosen) {
    const auto& members = by_class.at(class_ids[static_cast<size_t>(ci)]);
    const int m = static_cast<int>(members.size());
    if (m >= k) {
      for (int j : rng.sample_without_replacement(m, k))
        batch.push_back(members[static_cast<size_t>(j)]);
    } else {
      // Small class: keep every member once, then fill with replacement so
      // each identity still contributes k instances.
      for (int j = 0; j < m; ++j) batch.push_back(members[static_cast<size_t>(j)]);
      for (int j = m; j < k; ++j)
        batch.push_back(members[static_cast<size_t>(
            rng.uniform_int(0, m - 1))]);
    }
  }
  return batch;
}

namespace {

std::map<int, int> dense_id_map(const std::vector<std::optional<int>>& ids) {
  std::set<int> uniq;
  for (const auto& id : ids)
    if (id) uniq.insert(*id);
  std::map<int, int> out;
  int next = 0;
  for (int id : uniq) out[id] = next++;
  return out;
}

}  // namespace

PretrainResult pretrain_source(EmbeddingModel& model, const DatasetSplit& source,
                               const ExperimentConfig& cfg,
                               const std::string& stream, uint64_t start_step) {
  if (source.role() != data::SplitRole::source_train)
    throw Error("pretrain_source: split role must be source_train");
  model.check_payload(source);
  const auto ids = source.visible_ids();
  const auto id_map = dense_id_map(ids);
  if (id_map.size() < 2)
    throw Error(fmt::format(
        "pretrain_source: need >= 2 identities, got {}", id_map.size()));

  std::vector<int> indices, labels;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!ids[i]) throw Error("pretrain_source: source sample without ID");
    indices.push_back(static_cast<int>(i));
    labels.push_back(id_map.at(*ids[i]));
  }

  if (!model.has_id_classifier())
    model.set_id_classifier(static_cast<int>(id_map.size()),
                            derive_seed(cfg.seed, "id_head/" + stream));

  std::vector<ad::Parameter*> params = model.parameters();
  auto opt = nn::make_optimizer(cfg.effective_optimizer(), params,
                                cfg.effective_pretrain_learning_rate());

  PretrainResult result;
  const std::string batch_stream = "pretrain/batch/" + stream;
  for (uint64_t s = start_step;
       s < start_step + static_cast<uint64_t>(cfg.pretrain_steps); ++s) {
    Rng rng(cfg.seed, batch_stream, s);
    const std::vector<int> batch =
        pk_sample(indices, labels, cfg.batch_p, cfg.batch_k, rng);
    std::vector<int> batch_labels;
    batch_labels.reserve(batch.size());
    for (int idx : batch)
      batch_labels.push_back(id_map.at(*ids[static_cast<size_t>(idx)]));

    ad::Tape t;
    ad::Var in = t.input(data::batch_matrix(source, batch));
    ad::Var feat = model.embed(t, in, Branch::full);
    ad::Var probs = model.id_probs(t, feat);
    objectives::Loss loss = objectives::id_loss(t, probs, feat, batch_labels,
                                                cfg.lambda, cfg.margin);
    opt->zero_grad();
    t.backward(loss.var);
    opt->step();

    result.loss_curve.push_back(loss.value);
    result.last_parts.clear();
    for (const auto& [k, v] : loss.parts) result.last_parts[k] = v;
    ++result.steps;
  }
  return result;
}

void pretrain_all(ModelSet& models, const DatasetSplit& source,
                  const ExperimentConfig& cfg) {
  for (int i = 0; i < models.model_count(); ++i)
    pretrain_source(models.model(i), source, cfg, fmt::format("m{}", i + 1));
}

namespace {

// One clustered feature set: a (model, branch) pair.
struct Unit {
  int model = 0;
  Branch branch = Branch::full;
  std::string label() const {
    return fmt::format("m{}/{}", model + 1, embedding::to_string(branch));
  }
};

std::vector<Unit> units_for(Composition c) {
  switch (c) {
    case Composition::single: return {{0, Branch::full}};
    case Composition::ssg:
      return {{0, Branch::full}, {0, Branch::upper}, {0, Branch::lower}};
    case Composition::mmt: return {{0, Branch::full}, {1, Branch::full}};
  }
  throw Error("units_for: unknown composition");
}

clustering::ClusterParams cluster_params_from(const ExperimentConfig& cfg,
                                              int epoch, int unit_index) {
  clustering::ClusterParams p;
  p.algorithm = cfg.cluster_algorithm;
  p.eps = cfg.cluster_eps;
  p.eps_percentile = cfg.cluster_eps_percentile;
  p.min_pts = cfg.cluster_min_pts;
  p.pairwise_subsample = cfg.cluster_subsample;
  p.kmeans_k = cfg.kmeans_k;
  p.kmeans_seed = derive_seed(cfg.seed, "cluster/kmeans",
                              static_cast<uint64_t>(epoch) * 64 +
                                  static_cast<uint64_t>(unit_index));
  return p;
}

double probe_camera_accuracy(const Mat& features, const std::vector<int>& cameras,
                             int num_cameras, const ExperimentConfig& cfg,
                             int epoch) {
  DiscriminatorConfig dc;
  dc.feature_dim = static_cast<int>(features.cols());
  dc.hidden_dim = cfg.probe_hidden;
  dc.num_cameras = num_cameras;
  dc.conditional = false;
  Discriminator probe(dc, derive_seed(cfg.seed, "probe",
                                      static_cast<uint64_t>(epoch)));
  auto opt = nn::make_optimizer("adam", probe.parameters(), 1e-2);
  for (int s = 0; s < cfg.probe_steps; ++s) {
    ad::Tape t;
    ad::Var probs =
        probe.forward(t, t.input(features), std::nullopt, /*training=*/true);
    objectives::Loss loss = objectives::camera_adv_loss(t, probs, cameras);
    opt->zero_grad();
    t.backward(loss.var);
    opt->step();
  }
  return adversary::camera_accuracy(probe.predict(features), cameras);
}

struct LossAccumulator {
  std::map<std::string, double> sums;
  int count = 0;
  void add(const objectives::ComposedObjectives& obj) {
    for (const auto& [k, v] : obj.parts) sums[k] += v;
    sums["ps_id"] += obj.ps_id_value;
    ++count;
  }
  void add_scalar(const std::string& key, double v) { sums[key] += v; }
  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [k, v] : sums)
      out[k] = v / static_cast<double>(std::max(count, 1));
    return out;
  }
};

std::vector<int> batch_cameras(const DatasetSplit& split,
                               const std::vector<int>& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (int idx : batch)
    out.push_back(split.samples()[static_cast<size_t>(idx)].camera);
  return out;
}

// The conditioning centroids for a unit: the full-branch labeling for the
// multi-branch composition ("conditioned by the global embedding"), the
// unit's own labeling otherwise.
const PseudoLabeling& conditioning_labeling(
    Composition composition,
    const std::vector<clustering::ClusterOutcome>& outcomes, size_t unit) {
  if (composition == Composition::ssg) return *outcomes[0].labeling;
  return *outcomes[unit].labeling;
}

objectives::ComposedObjectives build_composition(
    ad::Tape& t, ModelSet& models, const DatasetSplit& target,
    const ExperimentConfig& cfg, const std::vector<Unit>& units,
    const std::vector<clustering::ClusterOutcome>& outcomes,
    std::vector<std::unique_ptr<Discriminator>>& discs,
    const std::vector<std::vector<int>>& batches,
    const std::vector<std::vector<int>>& batch_labels, double mu, double lambda,
    double margin, bool conditional, objectives::AdvGraphMode adv_mode) {
  const bool adversarial = !discs.empty();
  auto conditioning_var = [&](size_t u) {
    return t.input(clustering::centroids_for(
        conditioning_labeling(cfg.composition, outcomes, u), batches[u]));
  };

  if (cfg.composition == Composition::ssg) {
    std::vector<objectives::BranchBatch> branch_batches;
    for (size_t u = 0; u < units.size(); ++u) {
      objectives::BranchBatch b;
      b.branch = units[u].branch;
      ad::Var in = t.input(data::batch_matrix(target, batches[u]));
      b.features = models.model(units[u].model).embed(t, in, units[u].branch);
      b.pseudo_labels = batch_labels[u];
      b.cameras = batch_cameras(target, batches[u]);
      if (adversarial) {
        b.conditioning = conditioning_var(u);
        b.discriminator = discs[u].get();
      }
      branch_batches.push_back(std::move(b));
    }
    return objectives::ssg_composition(t, branch_batches, mu, margin,
                                       conditional, adv_mode, true);
  }

  auto member_batch = [&](size_t u) {
    objectives::PairMemberBatch m;
    ad::Var in = t.input(data::batch_matrix(target, batches[u]));
    m.features = models.model(units[u].model).embed(t, in, units[u].branch);
    m.probs = models.model(units[u].model).pseudo_probs(t, m.features);
    m.pseudo_labels = batch_labels[u];
    m.cameras = batch_cameras(target, batches[u]);
    if (adversarial) {
      m.conditioning = conditioning_var(u);
      m.discriminator = discs[u].get();
    }
    return m;
  };

  if (cfg.composition == Composition::mmt) {
    objectives::PairMemberBatch m1 = member_batch(0);
    objectives::PairMemberBatch m2 = member_batch(1);
    return objectives::mmt_composition(t, m1, m2, mu, lambda, margin,
                                       conditional, adv_mode, true);
  }
  objectives::PairMemberBatch m = member_batch(0);
  return objectives::single_composition(t, m, mu, lambda, margin, conditional,
                                        adv_mode, true);
}

}  // namespace

void restore_pretrained(ModelSet& models,
                        const std::map<std::string, Mat>& tensors) {
  int restored_backbone = 0;
  for (auto& np : models.named_parameters()) {
    auto it = tensors.find(np.name);
    if (it == tensors.end()) {
      if (np.name.find(".backbone.") != std::string::npos)
        throw Error(fmt::format(
            "pretrained tensors lack backbone parameter '{}'", np.name));
      continue;
    }
    if (it->second.rows() != np.param->rows() ||
        it->second.cols() != np.param->cols())
      throw Error(fmt::format("pretrained tensor '{}' shape mismatch", np.name));
    np.param->value = it->second;
    np.param->zero_grad();
    if (np.name.find(".backbone.") != std::string::npos) ++restored_backbone;
  }
  if (restored_backbone == 0)
    throw Error("pretrained tensors restored no backbone parameters");
}

AdaptResult adapt_target(ModelSet& models, const DatasetSplit& target,
                         const ExperimentConfig& cfg, const ReportSink& sink) {
  if (target.role() != data::SplitRole::target_train)
    throw Error("adapt_target: split role must be target_train");
  for (int i = 0; i < models.model_count(); ++i)
    models.model(i).check_payload(target);
  if (cfg.composition == Composition::mmt && !models.is_pair())
    throw Error("adapt_target: mmt composition needs a ModelPair");

  const double mu = cfg.effective_mu();
  const bool adversarial = cfg.adversarial();
  const bool conditional = cfg.conditional_discriminators();
  const double lambda = cfg.lambda;
  const double margin = cfg.margin;
  const std::vector<Unit> units = units_for(cfg.composition);

  const auto true_ids = eval::Diagnostics::true_ids(target);
  const bool have_true_ids =
      std::any_of(true_ids.begin(), true_ids.end(),
                  [](const auto& id) { return id.has_value(); });
  const std::vector<int> cameras = target.cameras();
  std::vector<std::optional<int>> cameras_opt(cameras.begin(), cameras.end());

  // Discriminators: one per unit, alive for the whole adaptation and
  // discarded when this function returns.
  std::vector<std::unique_ptr<Discriminator>> discs;
  std::vector<std::unique_ptr<nn::Optimizer>> disc_opts;
  if (adversarial) {
    for (size_t u = 0; u < units.size(); ++u) {
      DiscriminatorConfig dc;
      dc.feature_dim = cfg.feature_dim;
      dc.hidden_dim = cfg.disc_hidden;
      dc.num_cameras = target.num_cameras();
      dc.conditional = conditional;
      dc.merge = cfg.merge;
      discs.push_back(std::make_unique<Discriminator>(
          dc, derive_seed(cfg.seed, "disc/" + units[u].label())));
      disc_opts.push_back(nn::make_optimizer(cfg.effective_optimizer(),
                                             discs.back()->parameters(),
                                             cfg.effective_learning_rate()));
    }
  }

  std::vector<std::unique_ptr<nn::Optimizer>> backbone_opts;
  for (int i = 0; i < models.model_count(); ++i)
    backbone_opts.push_back(nn::make_optimizer(
        cfg.effective_optimizer(), models.model(i).backbone_parameters(),
        cfg.effective_learning_rate()));

  std::vector<int> all_indices(target.size());
  for (size_t i = 0; i < all_indices.size(); ++i)
    all_indices[i] = static_cast<int>(i);

  AdaptResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochReport report;
    report.epoch = epoch;

    // (1) Cluster the current feature snapshots.
    std::vector<clustering::ClusterOutcome> outcomes;
    bool any_missing = false;
    for (size_t u = 0; u < units.size(); ++u) {
      const Mat feats = models.model(units[u].model)
                            .embed_eval(target, all_indices, units[u].branch);
      outcomes.push_back(clustering::cluster_epoch(
          feats, cluster_params_from(cfg, epoch, static_cast<int>(u)), epoch,
          embedding::to_string(units[u].branch)));
      any_missing = any_missing || !outcomes.back().labeling;
    }

    const clustering::ClusterOutcome& primary_outcome = outcomes.front();
    report.eps_used = primary_outcome.eps_used;
    report.cluster_retries = primary_outcome.retries;

    bool trainable = !any_missing;
    if (!any_missing) {
      for (size_t u = 0; u < units.size(); ++u)
        if (outcomes[u].labeling->cluster_count() < 2) trainable = false;
    }

    if (!trainable) {
      // Zero (or degenerate) clustering: skip this epoch's fine-tuning.
      report.skipped = true;
      report.param_fingerprint = to_hex(models.parameter_fingerprint());
      report.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      result.series.entries.push_back(report.diagnostic_record());
      result.reports.push_back(report);
      if (sink) sink(report);
      continue;
    }

    const PseudoLabeling& primary = *primary_outcome.labeling;
    report.cluster_count = primary.cluster_count();
    report.outliers = primary.outlier_count();
    report.mi_pseudo_camera =
        eval::mutual_information(primary.assignments, cameras_opt);
    if (have_true_ids) {
      report.mi_true_id_camera = eval::mutual_information(
          true_ids, cameras_opt);
      report.lost_ids = clustering::lost_ids(primary, true_ids);
      const eval::ClusterQuality q = eval::cluster_quality(primary, true_ids);
      report.purity = q.purity;
      report.nmi = q.nmi;
    } else {
      report.extra["diagnostics_unavailable"] = 1.0;
    }
    for (size_t u = 1; u < units.size(); ++u) {
      const auto& lab = *outcomes[u].labeling;
      report.extra[fmt::format("cluster_count/{}", units[u].label())] =
          lab.cluster_count();
      report.extra[fmt::format("mi/{}", units[u].label())] =
          eval::mutual_information(lab.assignments, cameras_opt);
      if (have_true_ids)
        report.extra[fmt::format("lost_ids/{}", units[u].label())] =
            clustering::lost_ids(lab, true_ids);
    }

    // (2) Reallocate pseudo-ID heads and fine-tune.
    const double lr =
        cfg.effective_learning_rate() * cfg.schedule_factor(epoch);
    for (auto& opt : backbone_opts) opt->set_learning_rate(lr);
    for (auto& opt : disc_opts) opt->set_learning_rate(lr);

    std::vector<std::unique_ptr<nn::Optimizer>> head_opts;
    if (cfg.composition != Composition::ssg) {
      for (int i = 0; i < models.model_count(); ++i) {
        const int classes = outcomes[static_cast<size_t>(i)].labeling->cluster_count();
        models.model(i).reallocate_pseudo_head(
            classes, derive_seed(cfg.seed, fmt::format("pseudo_head/m{}", i + 1),
                                 static_cast<uint64_t>(epoch)));
        head_opts.push_back(nn::make_optimizer(
            cfg.effective_optimizer(),
            models.model(i).pseudo_head_parameters(), lr));
      }
    }

    // Per-unit eligibility. Branch units additionally require a full-branch
    // assignment because the conditioning vector is the full-branch centroid.
    const PseudoLabeling& full_labeling = primary;
    std::vector<std::vector<int>> eligible(units.size());
    for (size_t u = 0; u < units.size(); ++u) {
      const auto& lab = *outcomes[u].labeling;
      for (int idx : lab.assigned_indices()) {
        if (cfg.composition == Composition::ssg &&
            !full_labeling.assignments[static_cast<size_t>(idx)])
          continue;
        eligible[u].push_back(idx);
      }
    }

    const int batch_size = cfg.batch_p * cfg.batch_k;
    const int iterations =
        cfg.iterations_per_epoch > 0
            ? cfg.iterations_per_epoch
            : std::max<int>(1, static_cast<int>(eligible[0].size()) / batch_size);

    LossAccumulator acc;
    bool sampler_starved = false;
    for (int iter = 0; iter < iterations && !sampler_starved; ++iter) {
      const uint64_t tick =
          static_cast<uint64_t>(epoch) * 1000003ull + static_cast<uint64_t>(iter);

      // Sample one batch per unit from that unit's labeling.
      std::vector<std::vector<int>> batches(units.size());
      std::vector<std::vector<int>> batch_labels(units.size());
      try {
        for (size_t u = 0; u < units.size(); ++u) {
          const auto& lab = *outcomes[u].labeling;
          Rng rng(cfg.seed, "adapt/batch/" + units[u].label(), tick);
          batches[u] = pk_sample(eligible[u], lab.labels_for(eligible[u]),
                                 cfg.batch_p, cfg.batch_k, rng);
          batch_labels[u] = lab.labels_for(batches[u]);
        }
      } catch (const SamplerError&) {
        sampler_starved = true;
        break;
      }

      const auto adv_mode =
          cfg.routing == GradientRouting::gradient_reversal
              ? objectives::AdvGraphMode::reversed
              : objectives::AdvGraphMode::generator_only;

      // Alternating routing trains the discriminators first, on detached
      // feature values of the same batches (the backbone stays frozen).
      if (adversarial && cfg.routing == GradientRouting::alternating) {
        ad::Tape td;
        ad::Var total;
        for (size_t u = 0; u < units.size(); ++u) {
          const Mat feats = models.model(units[u].model)
                                .embed_eval(data::batch_matrix(target, batches[u]),
                                            units[u].branch);
          ad::Var fv = td.input(feats);
          const std::vector<int> cams = batch_cameras(target, batches[u]);
          objectives::Loss adv =
              conditional
                  ? objectives::conditional_camera_adv_loss(
                        td, *discs[u], fv,
                        td.input(clustering::centroids_for(
                            conditioning_labeling(cfg.composition, outcomes, u),
                            batches[u])),
                        cams, true)
                  : objectives::camera_adv_loss(
                        td, discs[u]->forward(td, fv, std::nullopt, true), cams);
          total = total.valid() ? td.add(total, adv.var) : adv.var;
        }
        for (auto& opt : disc_opts) opt->zero_grad();
        td.backward(total);
        for (auto& opt : disc_opts) opt->step();
      }

      // Generator graph (and, under gradient reversal, the discriminator's).
      ad::Tape t;
      objectives::ComposedObjectives composed = build_composition(
          t, models, target, cfg, units, outcomes, discs, batches, batch_labels,
          mu, lambda, margin, conditional, adv_mode);

      for (auto& opt : backbone_opts) opt->zero_grad();
      for (auto& opt : head_opts) opt->zero_grad();
      if (cfg.routing == GradientRouting::gradient_reversal)
        for (auto& opt : disc_opts) opt->zero_grad();
      t.backward(composed.train_objective);
      for (auto& opt : backbone_opts) opt->step();
      for (auto& opt : head_opts) opt->step();
      if (cfg.routing == GradientRouting::gradient_reversal)
        for (auto& opt : disc_opts) opt->step();

      acc.add(composed);
      if (adversarial) {
        acc.add_scalar("adv_total", composed.adv_value);
        acc.add_scalar("gen_obj", composed.minmax.generator_objective);
        acc.add_scalar("disc_obj", composed.minmax.discriminator_objective);
      }
    }

    report.losses = acc.means();
    if (sampler_starved) report.extra["sampler_starved"] = 1.0;

    if (cfg.camera_probe) {
      const Mat feats =
          models.primary().embed_eval(target, all_indices, Branch::full);
      report.camera_probe_accuracy = probe_camera_accuracy(
          feats, cameras, target.num_cameras(), cfg, epoch);
    }

    report.param_fingerprint = to_hex(models.parameter_fingerprint());
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.series.entries.push_back(report.diagnostic_record());
    result.reports.push_back(report);
    if (sink) sink(report);
  }
  return result;
}

std::vector<MuSweepRow> mu_sweep(const ExperimentConfig& cfg,
                                 const std::vector<double>& mus,
                                 const DataBundle& data,
                                 const std::map<std::string, Mat>& pretrained) {
  std::vector<MuSweepRow> rows;
  for (double mu : mus) {
    if (mu < 0.0) throw Error("mu_sweep: mu must be >= 0");
    ExperimentConfig run_cfg = cfg;
    run_cfg.mu = mu;
    ModelSet models = ModelSet::create(run_cfg);
    restore_pretrained(models, pretrained);
    adapt_target(models, data.target_train, run_cfg);
    const Mat qf = models.eval_features(data.query, run_cfg.composition);
    const Mat gf = models.eval_features(data.gallery, run_cfg.composition);
    rows.push_back({mu, eval::retrieve_and_score(data.query, data.gallery, qf, gf)});
  }
  return rows;
}

}  // namespace creid::train
