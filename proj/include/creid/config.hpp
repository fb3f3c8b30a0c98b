#pragma once

#include "creid/adversary.hpp"
#include "creid/clustering.hpp"
#include "creid/data.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace creid::harness {

enum class TrainMode { baseline, plain_adv, canu };
enum class Composition { single, ssg, mmt };

std::string to_string(TrainMode m);
std::string to_string(Composition c);
TrainMode mode_from_string(const std::string& s);
Composition composition_from_string(const std::string& s);

enum class DataKind { synthetic, directory };

// Every hyperparameter of a run in one validated record. Serialized as flat
// `section.key = value` lines; parsing rejects unknown keys. Negative
// sentinels for mu / learning rates resolve to composition-dependent
// defaults at validation time.
struct ExperimentConfig {
  // run
  uint64_t seed = 1;
  TrainMode mode = TrainMode::canu;
  Composition composition = Composition::single;

  // data
  DataKind data_kind = DataKind::synthetic;
  data::SyntheticSpec target_synth{};
  // Different default seed so source identities differ from the target's.
  data::SyntheticSpec source_synth{.seed = 2};
  std::string dir_train, dir_gallery, dir_query, dir_source;
  data::DatasetLayout layout{};

  // model
  data::PayloadKind payload = data::PayloadKind::feature;
  int image_height = 16, image_width = 8, image_channels = 1;
  int input_dim = 16;
  int feature_dim = 16;
  int conv_hidden = 8;
  int mlp_hidden = 32;
  int map_rows = 2;

  // loss
  double mu = -1.0;      // <0: 0.1 for single/mmt, 0.05 for ssg
  double lambda = 1.0;
  double margin = 0.5;

  // adversary
  int disc_hidden = 1024;
  adversary::MergeMode merge = adversary::MergeMode::sum;
  adversary::GradientRouting routing = adversary::GradientRouting::gradient_reversal;

  // clustering
  clustering::Algorithm cluster_algorithm = clustering::Algorithm::dbscan;
  double cluster_eps = 0.0;
  double cluster_eps_percentile = 0.0016;
  int cluster_min_pts = 4;
  int cluster_subsample = 1000;
  int kmeans_k = 8;

  // optimizer
  std::string optimizer = "auto";  // auto | adam | sgd
  double learning_rate = -1.0;     // <0: 3.5e-4 (adam) / 6e-5 (sgd)
  std::string schedule = "constant";  // constant | multistep:<e1[,e2..]>:<gamma>

  // training
  int epochs = 40;
  int iterations_per_epoch = 0;  // 0: one full sweep per epoch
  int batch_p = 4;
  int batch_k = 4;

  // pretraining
  int pretrain_steps = 300;
  double pretrain_learning_rate = -1.0;

  // diagnostics
  bool camera_probe = false;
  int probe_steps = 150;
  int probe_hidden = 32;

  // Effective values after sentinel resolution.
  double effective_mu() const;
  std::string effective_optimizer() const;
  double effective_learning_rate() const;
  double effective_pretrain_learning_rate() const;
  bool conditional_discriminators() const { return mode == TrainMode::canu; }
  bool adversarial() const { return mode != TrainMode::baseline; }

  // Learning-rate multiplier for an epoch under the configured schedule.
  double schedule_factor(int epoch) const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies one `key=value` override (same keys as the file format).
void apply_override(ExperimentConfig& cfg, const std::string& key_equals_value);
// Canonical serialization: every key, schema order.
std::string serialize_config(const ExperimentConfig& cfg);
// Range/enum/consistency checks; throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

std::string config_fingerprint(const ExperimentConfig& cfg);

}  // namespace creid::harness
