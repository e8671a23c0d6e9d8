#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guidelab/harness/taskset.hpp"
#include "guidelab/optimizer.hpp"

namespace guidelab::harness {

struct AnalysisConfig {
  std::string difficulty = "hard";  // preset of the task the analyses study
  int rollouts = 1000;              // guided rollouts per level for risk estimates
  std::vector<double> lambdas{0.0, 0.1, 1.0, 10.0};  // utility risk weights
  double rho = 0.8;
  double margin = 0.1;
  double xi = 0.05;
  int trial_count = 0;  // groups per level for Q estimates; 0: Hoeffding budget
  int pass_k = 32;
  int pass_trials = 2000;
  int bootstrap = 1000;
  bool operator==(const AnalysisConfig&) const = default;
};

struct ExperimentConfig {
  EnvShape env;
  DifficultyMix mix{{"easy", 0.34}, {"medium", 0.33}, {"hard", 0.33}};
  int task_count = 6;
  TrainConfig train;
  double gamma = kDefaultGuidanceStrength;
  double noise_ratio = 0.0;
  AnalysisConfig analysis;
  std::vector<int> ablate_fixed_k{2, 4, 6, 8, 10, 12};
  std::vector<double> noise_ratios{0.0, 0.1, 0.2};
  int checkpoint_interval = 100;
  bool dump_trajectories = false;
  std::uint64_t seed = 1;
  std::string output;  // empty: derived from the environment
  bool operator==(const ExperimentConfig&) const = default;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses "key = value" lines. Keys are dotted ("train.steps"); a "[train]"
/// line prefixes the keys that follow. '#' starts a comment. Unknown keys,
/// duplicate keys and malformed values throw ConfigError.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path);
/// Throws ConfigError on out-of-range values.
void validate_config(const ExperimentConfig& config);

/// Every key in a fixed order, one per line; re-parses to an equal config.
std::string echo_config(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string doc;
};
std::vector<KeyDoc> config_schema();

/// Name of the environment variable holding the default output root.
inline constexpr const char* kOutputRootEnv = "GUIDELAB_OUT";

}  // namespace guidelab::harness
