#pragma once

// Run configuration file: TOML-style `[section]` headers with `key = value`
// lines. Values are strings, integers, floats, booleans or single-line
// arrays of those. Unknown sections and keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "onn/experiment.hpp"

namespace onn {

struct RunConfig {
  ExperimentConfig experiment;
  std::string corpus = "synthetic";  // "synthetic" or an image directory
  int image_size = 60;
  int synthetic_count = 0;  // 0: enough images for the folds
  std::uint64_t synthetic_seed = 7;
  std::string output_dir = "onn_out";

  void validate() const;
  // Image count the synthetic corpus is generated with.
  int effective_synthetic_count() const;
  bool operator==(const RunConfig&) const = default;
};

// Defaults for a task kind: its sub-library and pair counts.
RunConfig default_run_config(TaskKind kind = TaskKind::transform);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

// Replaces task.seed with $ONN_SEED when the variable is set.
void apply_env_overrides(RunConfig& cfg);

// Synthetic or on-disk corpus, per the config.
Corpus load_run_corpus(const RunConfig& cfg);

}  // namespace onn
