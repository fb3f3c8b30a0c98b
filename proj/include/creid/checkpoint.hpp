#pragma once

#include "creid/common.hpp"
#include "creid/nn.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace creid::harness {

// Versioned binary container of named parameter tensors plus the config
// fingerprint of the run that produced it.
struct Checkpoint {
  uint32_t version = 1;
  std::string config_fingerprint;
  uint64_t step = 0;
  uint64_t epoch = 0;
  std::map<std::string, Mat> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Collects parameters into a checkpoint tensor map / restores them by name.
void store_parameters(Checkpoint& ckpt,
                      const std::vector<nn::NamedParameter>& params);
void restore_parameters(const Checkpoint& ckpt,
                        const std::vector<nn::NamedParameter>& params);

}  // namespace creid::harness
