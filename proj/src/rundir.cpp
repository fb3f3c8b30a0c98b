#include "creid/rundir.hpp"

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

namespace creid::harness {

namespace fs = std::filesystem;
using nlohmann::json;

RunDir RunDir::create(const fs::path& root, const std::string& name,
                      const ExperimentConfig& cfg) {
  fs::create_directories(root);
  fs::path dir = root / name;
  for (int suffix = 1; fs::exists(dir); ++suffix)
    dir = root / fmt::format("{}-{}", name, suffix);
  fs::create_directories(dir);

  RunDir run;
  run.dir_ = dir;
  std::ofstream out(run.config_path());
  if (!out) throw Error(fmt::format("cannot write '{}'", run.config_path().string()));
  out << serialize_config(cfg);
  std::ofstream fp(dir / "fingerprint.txt");
  fp << config_fingerprint(cfg) << "\n";
  return run;
}

RunDir RunDir::open(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw Error(fmt::format("run directory '{}' does not exist", dir.string()));
  RunDir run;
  run.dir_ = dir;
  return run;
}

ExperimentConfig RunDir::config() const { return load_config(config_path()); }

void RunDir::append_report(const train::EpochReport& report) const {
  std::ofstream out(reports_path(), std::ios::app);
  if (!out) throw Error(fmt::format("cannot append '{}'", reports_path().string()));
  out << report_to_json(report) << "\n";
}

std::vector<train::EpochReport> RunDir::read_reports() const {
  std::ifstream in(reports_path());
  if (!in)
    throw Error(fmt::format("run '{}' has no reports.jsonl", dir_.string()));
  std::vector<train::EpochReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(report_from_json(line));
  }
  return out;
}

fs::path run_root() {
  if (const char* env = std::getenv("CREID_RUN_ROOT"); env && *env)
    return fs::path(env);
  return fs::path("runs");
}

std::string report_to_json(const train::EpochReport& r) {
  json j;
  j["epoch"] = r.epoch;
  j["skipped"] = r.skipped;
  j["wall_time_s"] = r.wall_time_s;
  j["losses"] = r.losses;
  j["cluster_count"] = r.cluster_count;
  j["outliers"] = r.outliers;
  j["eps_used"] = r.eps_used;
  j["cluster_retries"] = r.cluster_retries;
  j["mi_pseudo_camera"] = r.mi_pseudo_camera;
  j["mi_true_id_camera"] = r.mi_true_id_camera;
  j["lost_ids"] = r.lost_ids;
  j["purity"] = r.purity;
  j["nmi"] = r.nmi;
  if (r.camera_probe_accuracy) j["camera_probe_accuracy"] = *r.camera_probe_accuracy;
  j["param_fingerprint"] = r.param_fingerprint;
  if (!r.extra.empty()) j["extra"] = r.extra;
  return j.dump();
}

train::EpochReport report_from_json(const std::string& line) {
  const json j = json::parse(line);
  train::EpochReport r;
  r.epoch = j.at("epoch").get<int>();
  r.skipped = j.at("skipped").get<bool>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  r.losses = j.at("losses").get<std::map<std::string, double>>();
  r.cluster_count = j.at("cluster_count").get<int>();
  r.outliers = j.at("outliers").get<int>();
  r.eps_used = j.at("eps_used").get<double>();
  r.cluster_retries = j.at("cluster_retries").get<int>();
  r.mi_pseudo_camera = j.at("mi_pseudo_camera").get<double>();
  r.mi_true_id_camera = j.at("mi_true_id_camera").get<double>();
  r.lost_ids = j.at("lost_ids").get<int>();
  r.purity = j.at("purity").get<double>();
  r.nmi = j.at("nmi").get<double>();
  if (j.contains("camera_probe_accuracy"))
    r.camera_probe_accuracy = j.at("camera_probe_accuracy").get<double>();
  r.param_fingerprint = j.at("param_fingerprint").get<std::string>();
  if (j.contains("extra"))
    r.extra = j.at("extra").get<std::map<std::string, double>>();
  return r;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "");
    out << "\n";
  };
  emit_row(header);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw Error("write_csv: row width does not match header");
    emit_row(row);
  }
}

}  // namespace creid::harness
