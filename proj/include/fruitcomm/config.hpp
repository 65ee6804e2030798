#pragma once

// Experiment configuration: flat `section.key = value` text. Every setting has
// a default, so a config file only lists what it changes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "fruitcomm/causal.hpp"
#include "fruitcomm/dataset.hpp"
#include "fruitcomm/probe.hpp"
#include "fruitcomm/trainer.hpp"

namespace fruitcomm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;  // master seed
  std::size_t threads = 1;

  std::string table;        // empty: the shipped table
  std::uint64_t data_seed = 1;
  SplitCounts counts;

  TrainConfig train;
  MEConfig me;
  std::size_t test_seeds = 20;
  std::size_t test_batches = 12;
  std::size_t test_games_per_batch = 100;
  ProbeConfig probe;

  /// Copies `seed` and `threads` into the module configs.
  void propagate();
  void validate() const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment; throws ConfigError on unknown keys.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Every key in a fixed order. parse_config(write_config(c)) == c.
void write_config(std::ostream& out, const ExperimentConfig& config);
std::string config_text(const ExperimentConfig& config);

/// FNV-1a over the canonical text without `threads`, as 16 hex digits. Outputs
/// do not depend on the thread count, so neither does the hash.
std::string config_hash(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace fruitcomm
