#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/harness/config.hpp"

namespace guidelab::harness {

/// One output file; every write goes through a single lock so concurrent
/// producers never interleave lines.
class OutputFile {
 public:
  explicit OutputFile(const std::filesystem::path& path);
  void line(const std::string& text);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mu_;
};

/// "# config_hash=<hex> env_hash=<hex>"
std::string hash_header(const std::string& config_hash, const std::string& env_hash);

inline constexpr const char* kMetricsHeader =
    "step,mode,exact_success,trainable_frac,mean_k_star,mean_reward,grad_norm,clip_frac,kl";
std::string metrics_row(const StepMetrics& m);

/// --out wins, then the config's output key, then $GUIDELAB_OUT/<command>,
/// then runs/<command>.
std::filesystem::path resolve_output(const ExperimentConfig& config, const std::string& command,
                                     const std::optional<std::string>& cli_out);

struct RunContext {
  ExperimentConfig config;
  std::filesystem::path out;
  bool quiet = false;
};

/// Generated tasks, with noised plans when guidance.noise_ratio > 0.
TaskSet build_taskset(const ExperimentConfig& config);
/// First generated task of analysis.difficulty; throws when there is none.
Task analysis_task(const ExperimentConfig& config);

/// Variant label used in ablation outputs, e.g. "fixed-k:8", "always-guided/naive".
struct Variant {
  std::string label;
  TrainConfig train;
};
std::vector<Variant> ablation_variants(const ExperimentConfig& config);

struct TrainOutcome {
  double final_exact_success = 0.0;
  std::vector<double> per_task;
};

/// Trains one variant. With a stem, writes metrics_<stem>.csv and
/// selection_<stem>.jsonl (plain metrics.csv / selection.jsonl for an empty
/// stem); `full_artifacts` adds checkpoints and trajectory dumps. Without a
/// stem nothing is written.
TrainOutcome train_variant(const RunContext& ctx, const TaskSet& tasks, const TrainConfig& train,
                           const std::optional<std::string>& stem, bool full_artifacts);

// Subcommands. Each returns a process exit status.
int run_gen_tasks(const RunContext& ctx);
int run_train(const RunContext& ctx);
int run_ablate(const RunContext& ctx);
int run_noise_sweep(const RunContext& ctx);
int run_risk_curve(const RunContext& ctx);
int run_barrier_profile(const RunContext& ctx, std::optional<int> level);
int run_select_level(const RunContext& ctx);

}  // namespace guidelab::harness
