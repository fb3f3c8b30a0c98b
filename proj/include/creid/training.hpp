#pragma once

#include "creid/adversary.hpp"
#include "creid/config.hpp"
#include "creid/data.hpp"
#include "creid/embedding.hpp"
#include "creid/evaluation.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace creid::train {

using harness::Composition;
using harness::ExperimentConfig;
using harness::TrainMode;

// One finished epoch of adaptation: loss breakdown, clustering summary and
// diagnostics. Wall time is the only non-deterministic field.
struct EpochReport {
  int epoch = 0;
  bool skipped = false;
  double wall_time_s = 0.0;
  std::map<std::string, double> losses;
  int cluster_count = 0;
  int outliers = 0;
  double eps_used = 0.0;
  int cluster_retries = 0;
  double mi_pseudo_camera = 0.0;
  double mi_true_id_camera = 0.0;
  int lost_ids = 0;
  double purity = 0.0;
  double nmi = 0.0;
  std::optional<double> camera_probe_accuracy;
  std::string param_fingerprint;
  std::map<std::string, double> extra;  // per-branch / per-model detail

  eval::DiagnosticRecord diagnostic_record() const;
};

using ReportSink = std::function<void(const EpochReport&)>;

embedding::ModelConfig model_config_from(const ExperimentConfig& cfg);

// One or two embedding models, per the configured composition.
class ModelSet {
 public:
  static ModelSet create(const ExperimentConfig& cfg);

  int model_count() const { return pair_ ? 2 : 1; }
  bool is_pair() const { return pair_ != nullptr; }
  embedding::EmbeddingModel& model(int i);
  embedding::EmbeddingModel& primary() { return model(0); }
  embedding::ModelPair& pair();

  // Names carry m1. / m2. prefixes.
  std::vector<nn::NamedParameter> named_parameters();
  uint64_t parameter_fingerprint() const;

  // Evaluation-time features for a split (mode selected by composition).
  Mat eval_features(const data::DatasetSplit& split, Composition composition);

 private:
  std::unique_ptr<embedding::EmbeddingModel> single_;
  std::unique_ptr<embedding::ModelPair> pair_;
};

// The splits a run needs, assembled from synthetic specs or directories.
// target_train is label-hidden; target_train_visible keeps the raw split for
// building it (diagnostics read the sealed channel, never this copy).
struct DataBundle {
  data::DatasetSplit source;
  data::DatasetSplit target_train;
  data::DatasetSplit gallery;
  data::DatasetSplit query;
};

DataBundle load_data(const ExperimentConfig& cfg);

struct PretrainResult {
  std::vector<double> loss_curve;
  std::map<std::string, double> last_parts;
  uint64_t steps = 0;
};

// Source pre-training: CE + lambda*triplet on branch-F features with an ID
// classifier head. Deterministic given cfg.seed; per-step batches are derived
// statelessly from (seed, stream, step) so training can resume mid-run.
PretrainResult pretrain_source(embedding::EmbeddingModel& model,
                               const data::DatasetSplit& source,
                               const ExperimentConfig& cfg,
                               const std::string& stream = "m1",
                               uint64_t start_step = 0);

// Pretrains every model in the set (pair members get independent streams).
void pretrain_all(ModelSet& models, const data::DatasetSplit& source,
                  const ExperimentConfig& cfg);

struct AdaptResult {
  std::vector<EpochReport> reports;
  eval::DiagnosticSeries series;
};

// The alternating adaptation pipeline: per epoch, (1) extract target features
// and cluster them into pseudo-IDs with centroids, (2) fine-tune with the
// composed (conditionally) adversarial objective over P*K batches of
// non-outlier samples. Discriminators live only inside this call.
AdaptResult adapt_target(ModelSet& models, const data::DatasetSplit& target,
                         const ExperimentConfig& cfg,
                         const ReportSink& sink = {});

// Restores pretrained tensors (by prefixed name) into a model set. Every
// backbone parameter must be covered; other matching names are restored too.
void restore_pretrained(ModelSet& models,
                        const std::map<std::string, Mat>& tensors);

struct MuSweepRow {
  double mu;
  eval::RetrievalResult result;
};

// One adapt + retrieval evaluation per mu, every run starting from the same
// pretrained parameters.
std::vector<MuSweepRow> mu_sweep(const ExperimentConfig& cfg,
                                 const std::vector<double>& mus,
                                 const DataBundle& data,
                                 const std::map<std::string, Mat>& pretrained);

// Stateless P*K batch sampler: P distinct classes (all of them when fewer
// than P are available, minimum 2), K instances each, with replacement inside
// a class only when it has fewer than K members.
std::vector<int> pk_sample(const std::vector<int>& sample_indices,
                           const std::vector<int>& labels, int p, int k,
                           Rng& rng);

}  // namespace creid::train
