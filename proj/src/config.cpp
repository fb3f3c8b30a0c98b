#include "creid/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace creid::harness {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::plain_adv: return "plain_adv";
    case TrainMode::canu: return "canu";
  }
  return "?";
}

std::string to_string(Composition c) {
  switch (c) {
    case Composition::single: return "single";
    case Composition::ssg: return "ssg";
    case Composition::mmt: return "mmt";
  }
  return "?";
}

TrainMode mode_from_string(const std::string& s) {
  if (s == "baseline") return TrainMode::baseline;
  if (s == "plain_adv") return TrainMode::plain_adv;
  if (s == "canu") return TrainMode::canu;
  throw ConfigError(fmt::format("unknown mode '{}'", s));
}

Composition composition_from_string(const std::string& s) {
  if (s == "single") return Composition::single;
  if (s == "ssg") return Composition::ssg;
  if (s == "mmt") return Composition::mmt;
  throw ConfigError(fmt::format("unknown composition '{}'", s));
}

double ExperimentConfig::effective_mu() const {
  if (mu >= 0.0) return mu;
  return composition == Composition::ssg ? 0.05 : 0.1;
}

std::string ExperimentConfig::effective_optimizer() const {
  if (optimizer != "auto") return optimizer;
  return composition == Composition::ssg ? "sgd" : "adam";
}

double ExperimentConfig::effective_learning_rate() const {
  if (learning_rate >= 0.0) return learning_rate;
  return effective_optimizer() == "sgd" ? 6e-5 : 3.5e-4;
}

double ExperimentConfig::effective_pretrain_learning_rate() const {
  if (pretrain_learning_rate >= 0.0) return pretrain_learning_rate;
  return effective_learning_rate();
}

double ExperimentConfig::schedule_factor(int epoch) const {
  if (schedule == "constant") return 1.0;
  // multistep:<e1[,e2..]>:<gamma>
  const auto first = schedule.find(':');
  const auto last = schedule.rfind(':');
  const std::string epochs_part = schedule.substr(first + 1, last - first - 1);
  const double gamma = std::stod(schedule.substr(last + 1));
  double factor = 1.0;
  std::stringstream ss(epochs_part);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (epoch >= std::stoi(tok)) factor *= gamma;
  return factor;
}

namespace {

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not an unsigned integer", key, v));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

#define INT_FIELD(key, member)                                            \
  Field{key, [](const ExperimentConfig& c) { return fmt::format("{}", c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_int(key, v); }}
#define U64_FIELD(key, member)                                            \
  Field{key, [](const ExperimentConfig& c) { return fmt::format("{}", c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_u64(key, v); }}
#define DBL_FIELD(key, member)                                            \
  Field{key, [](const ExperimentConfig& c) { return fmt_double(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(key, v); }}
#define STR_FIELD(key, member)                                            \
  Field{key, [](const ExperimentConfig& c) { return c.member; },          \
        [](ExperimentConfig& c, const std::string& v) { c.member = v; }}
#define BOOL_FIELD(key, member)                                           \
  Field{key, [](const ExperimentConfig& c) { return c.member ? "true" : "false"; }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(key, v); }}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      U64_FIELD("run.seed", seed),
      Field{"run.mode",
            [](const ExperimentConfig& c) { return to_string(c.mode); },
            [](ExperimentConfig& c, const std::string& v) {
              c.mode = mode_from_string(v);
            }},
      Field{"run.composition",
            [](const ExperimentConfig& c) { return to_string(c.composition); },
            [](ExperimentConfig& c, const std::string& v) {
              c.composition = composition_from_string(v);
            }},
      Field{"data.kind",
            [](const ExperimentConfig& c) {
              return c.data_kind == DataKind::synthetic ? "synthetic"
                                                        : "directory";
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "synthetic") c.data_kind = DataKind::synthetic;
              else if (v == "directory") c.data_kind = DataKind::directory;
              else throw ConfigError(fmt::format("data.kind: unknown '{}'", v));
            }},
      INT_FIELD("data.synthetic.num_identities", target_synth.num_identities),
      INT_FIELD("data.synthetic.num_cameras", target_synth.num_cameras),
      INT_FIELD("data.synthetic.samples_per_id", target_synth.samples_per_id),
      INT_FIELD("data.synthetic.id_dim", target_synth.id_dim),
      DBL_FIELD("data.synthetic.camera_shift_scale", target_synth.camera_shift_scale),
      DBL_FIELD("data.synthetic.correlation", target_synth.correlation),
      DBL_FIELD("data.synthetic.noise_sigma", target_synth.noise_sigma),
      U64_FIELD("data.synthetic.seed", target_synth.seed),
      INT_FIELD("data.synthetic_source.num_identities", source_synth.num_identities),
      INT_FIELD("data.synthetic_source.num_cameras", source_synth.num_cameras),
      INT_FIELD("data.synthetic_source.samples_per_id", source_synth.samples_per_id),
      INT_FIELD("data.synthetic_source.id_dim", source_synth.id_dim),
      DBL_FIELD("data.synthetic_source.camera_shift_scale",
                source_synth.camera_shift_scale),
      DBL_FIELD("data.synthetic_source.correlation", source_synth.correlation),
      DBL_FIELD("data.synthetic_source.noise_sigma", source_synth.noise_sigma),
      U64_FIELD("data.synthetic_source.seed", source_synth.seed),
      STR_FIELD("data.dir.train", dir_train),
      STR_FIELD("data.dir.gallery", dir_gallery),
      STR_FIELD("data.dir.query", dir_query),
      STR_FIELD("data.dir.source_train", dir_source),
      STR_FIELD("data.layout.pattern", layout.pattern),
      INT_FIELD("data.layout.camera_index_base", layout.camera_index_base),
      Field{"data.layout.distractor_ids",
            [](const ExperimentConfig& c) {
              std::string out;
              for (int id : c.layout.distractor_ids)
                out += (out.empty() ? "" : ",") + fmt::format("{}", id);
              return out;
            },
            [](ExperimentConfig& c, const std::string& v) {
              c.layout.distractor_ids.clear();
              std::stringstream ss(v);
              std::string tok;
              while (std::getline(ss, tok, ','))
                if (!trim(tok).empty())
                  c.layout.distractor_ids.insert(
                      parse_int("data.layout.distractor_ids", trim(tok)));
            }},
      Field{"model.payload",
            [](const ExperimentConfig& c) {
              return c.payload == data::PayloadKind::image ? "image" : "feature";
            },
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "image") c.payload = data::PayloadKind::image;
              else if (v == "feature") c.payload = data::PayloadKind::feature;
              else throw ConfigError(fmt::format("model.payload: unknown '{}'", v));
            }},
      INT_FIELD("model.image_height", image_height),
      INT_FIELD("model.image_width", image_width),
      INT_FIELD("model.image_channels", image_channels),
      INT_FIELD("model.input_dim", input_dim),
      INT_FIELD("model.feature_dim", feature_dim),
      INT_FIELD("model.conv_hidden", conv_hidden),
      INT_FIELD("model.mlp_hidden", mlp_hidden),
      INT_FIELD("model.map_rows", map_rows),
      DBL_FIELD("loss.mu", mu),
      DBL_FIELD("loss.lambda", lambda),
      DBL_FIELD("loss.margin", margin),
      INT_FIELD("adversary.hidden_dim", disc_hidden),
      Field{"adversary.merge",
            [](const ExperimentConfig& c) { return adversary::to_string(c.merge); },
            [](ExperimentConfig& c, const std::string& v) {
              c.merge = adversary::merge_from_string(v);
            }},
      Field{"adversary.routing",
            [](const ExperimentConfig& c) {
              return adversary::to_string(c.routing);
            },
            [](ExperimentConfig& c, const std::string& v) {
              c.routing = adversary::routing_from_string(v);
            }},
      Field{"cluster.algorithm",
            [](const ExperimentConfig& c) {
              return clustering::to_string(c.cluster_algorithm);
            },
            [](ExperimentConfig& c, const std::string& v) {
              c.cluster_algorithm = clustering::algorithm_from_string(v);
            }},
      DBL_FIELD("cluster.eps", cluster_eps),
      DBL_FIELD("cluster.eps_percentile", cluster_eps_percentile),
      INT_FIELD("cluster.min_pts", cluster_min_pts),
      INT_FIELD("cluster.subsample", cluster_subsample),
      INT_FIELD("cluster.kmeans_k", kmeans_k),
      STR_FIELD("optim.name", optimizer),
      DBL_FIELD("optim.learning_rate", learning_rate),
      STR_FIELD("optim.schedule", schedule),
      INT_FIELD("train.epochs", epochs),
      INT_FIELD("train.iterations_per_epoch", iterations_per_epoch),
      INT_FIELD("train.batch_p", batch_p),
      INT_FIELD("train.batch_k", batch_k),
      INT_FIELD("pretrain.steps", pretrain_steps),
      DBL_FIELD("pretrain.learning_rate", pretrain_learning_rate),
      BOOL_FIELD("diag.camera_probe", camera_probe),
      INT_FIELD("diag.probe_steps", probe_steps),
      INT_FIELD("diag.probe_hidden", probe_hidden),
  };
  return fields;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DBL_FIELD
#undef STR_FIELD
#undef BOOL_FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : schema())
    if (f.key == key) return f;
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    find_field(key).set(cfg, value);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError(fmt::format("override '{}' must be key=value", kv));
  const std::string key = trim(kv.substr(0, eq));
  const std::string value = trim(kv.substr(eq + 1));
  find_field(key).set(cfg, value);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : schema()) {
    const std::string this_section = f.key.substr(0, f.key.find('.'));
    if (this_section != section) {
      if (!out.empty()) out += "\n";
      section = this_section;
    }
    out += fmt::format("{} = {}\n", f.key, f.get(cfg));
  }
  return out;
}

void validate_config(const ExperimentConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(cfg.mu >= 0.0 || cfg.mu == -1.0,
          "loss.mu must be >= 0 (or -1 for the composition default)");
  require(cfg.lambda >= 0.0, "loss.lambda must be >= 0");
  require(cfg.margin >= 0.0, "loss.margin must be >= 0");
  require(cfg.batch_p >= 2, "train.batch_p must be >= 2");
  require(cfg.batch_k >= 2, "train.batch_k must be >= 2");
  require(cfg.epochs >= 1, "train.epochs must be >= 1");
  require(cfg.iterations_per_epoch >= 0,
          "train.iterations_per_epoch must be >= 0");
  require(cfg.pretrain_steps >= 0, "pretrain.steps must be >= 0");
  require(cfg.feature_dim >= 1, "model.feature_dim must be >= 1");
  require(cfg.disc_hidden >= 1, "adversary.hidden_dim must be >= 1");
  require(cfg.cluster_min_pts >= 1, "cluster.min_pts must be >= 1");
  require(cfg.cluster_eps_percentile > 0.0 && cfg.cluster_eps_percentile <= 1.0,
          "cluster.eps_percentile must be in (0, 1]");
  require(cfg.kmeans_k >= 1, "cluster.kmeans_k must be >= 1");
  require(cfg.optimizer == "auto" || cfg.optimizer == "adam" ||
              cfg.optimizer == "sgd",
          "optim.name must be auto|adam|sgd");
  require(cfg.probe_steps >= 1, "diag.probe_steps must be >= 1");
  require(cfg.probe_hidden >= 1, "diag.probe_hidden must be >= 1");
  if (cfg.schedule != "constant") {
    const bool well_formed =
        cfg.schedule.rfind("multistep:", 0) == 0 &&
        std::count(cfg.schedule.begin(), cfg.schedule.end(), ':') == 2;
    require(well_formed,
            "optim.schedule must be 'constant' or 'multistep:<e1[,e2..]>:<gamma>'");
    ExperimentConfig probe = cfg;
    try {
      (void)probe.schedule_factor(0);
    } catch (const std::exception&) {
      throw ConfigError("optim.schedule: malformed multistep specification");
    }
  }
  if (cfg.data_kind == DataKind::synthetic) {
    require(cfg.payload == data::PayloadKind::feature,
            "synthetic data emits feature payloads; set model.payload = feature");
    require(cfg.input_dim == cfg.target_synth.id_dim,
            "model.input_dim must equal data.synthetic.id_dim");
    require(cfg.source_synth.id_dim == cfg.target_synth.id_dim,
            "source and target synthetic id_dim must match");
    require(cfg.target_synth.correlation >= 0.0 &&
                cfg.target_synth.correlation <= 1.0,
            "data.synthetic.correlation must be in [0, 1]");
    require(cfg.source_synth.correlation >= 0.0 &&
                cfg.source_synth.correlation <= 1.0,
            "data.synthetic_source.correlation must be in [0, 1]");
  } else {
    require(!cfg.dir_train.empty(), "data.dir.train is required");
    require(!cfg.dir_gallery.empty(), "data.dir.gallery is required");
    require(!cfg.dir_query.empty(), "data.dir.query is required");
  }
  if (cfg.payload == data::PayloadKind::image) {
    require(cfg.image_height >= 8 && cfg.image_height % 8 == 0,
            "model.image_height must be a positive multiple of 8");
    require(cfg.image_width >= 4 && cfg.image_width % 4 == 0,
            "model.image_width must be a positive multiple of 4");
    require(cfg.image_channels == 1 || cfg.image_channels == 3,
            "model.image_channels must be 1 or 3");
  } else {
    require(cfg.map_rows >= 2 && cfg.map_rows % 2 == 0,
            "model.map_rows must be even and >= 2");
  }
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
  const std::string s = serialize_config(cfg);
  return to_hex(fnv1a(s.data(), s.size()));
}

}  // namespace creid::harness
