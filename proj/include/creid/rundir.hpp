#pragma once

#include "creid/config.hpp"
#include "creid/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace creid::harness {

// A self-describing run directory: config snapshot + fingerprint, epoch
// reports as JSONL, checkpoints, result tables and figures. Append-only
// during a run.
class RunDir {
 public:
  // Creates <root>/<name>; an existing directory gets a numeric suffix.
  static RunDir create(const std::filesystem::path& root,
                       const std::string& name, const ExperimentConfig& cfg);
  // Opens an existing run directory (read-side: diagnose/evaluate).
  static RunDir open(const std::filesystem::path& dir);

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path reports_path() const { return dir_ / "reports.jsonl"; }
  std::filesystem::path config_path() const { return dir_ / "config.creid"; }
  std::filesystem::path checkpoint_path(const std::string& name) const {
    return dir_ / (name + ".ckpt");
  }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

  void append_report(const train::EpochReport& report) const;
  std::vector<train::EpochReport> read_reports() const;

  ExperimentConfig config() const;

 private:
  std::filesystem::path dir_;
};

// Default run root: $CREID_RUN_ROOT or ./runs.
std::filesystem::path run_root();

std::string report_to_json(const train::EpochReport& report);
train::EpochReport report_from_json(const std::string& line);

// A minimal CSV table writer (deterministic formatting).
void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace creid::harness
