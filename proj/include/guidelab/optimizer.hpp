#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "guidelab/guidance.hpp"
#include "guidelab/policy.hpp"
#include "guidelab/rollout.hpp"
#include "guidelab/task.hpp"

namespace guidelab {

enum class AdvantageMode { mean_centered, std_normalized };
enum class AdvantagePooling { joint, per_source };
/// mixed: guided tokens are importance-weighted against the guided
/// behaviour policy. naive: every token is treated as unguided on-policy data.
enum class RatioMode { mixed, naive };
enum class TrainMode { vanilla, actguide, fixed_k, always_guided, opsd };

std::string to_string(AdvantageMode m);
std::string to_string(AdvantagePooling p);
std::string to_string(RatioMode m);
std::string to_string(TrainMode m);
AdvantageMode parse_advantage_mode(const std::string& s);
AdvantagePooling parse_advantage_pooling(const std::string& s);
RatioMode parse_ratio_mode(const std::string& s);
TrainMode parse_train_mode(const std::string& s);

inline constexpr double kDefaultLearningRate = 50.0;

struct TrainConfig {
  int minibatch_size = 1;
  int group_size = 8;
  double clip = 0.2;
  double kl_coeff = 0.001;
  double learning_rate = kDefaultLearningRate;
  int steps = 500;
  double delta = 0.5;
  int budget = 0;     // 0: ceil(log2 K) + 2
  int max_level = 0;  // K; 0: full plan length
  AdvantageMode advantage_mode = AdvantageMode::mean_centered;
  AdvantagePooling pooling = AdvantagePooling::joint;
  RatioMode ratio_mode = RatioMode::mixed;
  TrainMode mode = TrainMode::actguide;
  int fixed_k = 0;
  bool reverify = false;  // re-probe k* once and log disagreement
  bool reuse_probe = false;  // use the successful k* probe group as the guided group
  double opsd_coeff = 1.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode);

/// Fills `advantages` on every group of one task: jointly over the merged
/// groups, or separately per group.
void assign_advantages(std::span<RolloutGroup> task_groups, AdvantageMode mode, AdvantagePooling pooling);

/// pi_theta(a | s) over the behaviour denominator chosen by source and mode.
double mixed_ratio(const PolicyParams& params, const PolicyParams& params_old, const StepRecord& step,
                   Source source, RatioMode mode = RatioMode::mixed);

/// Normalisers of the mixed objective: total token count and trajectory
/// count of the whole minibatch. Zero means "derive from the groups given".
struct ObjectiveScale {
  double token_count = 0.0;
  double trajectory_count = 0.0;
};
ObjectiveScale batch_scale(std::span<const RolloutGroup> groups);

struct UpdateReport {
  double surrogate = 0.0;
  double kl = 0.0;  // mean over trajectories of the summed per-step KL
  double grad_norm = 0.0;
  bool trainable = false;
  double clip_fraction = 0.0;
  long tokens = 0;
  long clipped_tokens = 0;
};

struct ObjectiveGradient {
  Table grad;  // ascent direction of the objective
  UpdateReport report;
};

/// Clipped mixed surrogate minus beta times the live-state KL to params_ref.
double mixed_objective_value(const PolicyParams& params, std::span<const RolloutGroup> groups,
                             const PolicyParams& params_old, const PolicyParams& params_ref,
                             const TrainConfig& config, ObjectiveScale scale = {});

ObjectiveGradient mixed_objective_grad(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                       const PolicyParams& params_old, const PolicyParams& params_ref,
                                       const TrainConfig& config, ObjectiveScale scale = {});

/// Self-distillation loss: mean over trajectories of the per-token average
/// KL(sg[pi_old(.|t, g)] || pi_theta(.|t)).
double opsd_loss(const PolicyParams& params, const PolicyParams& params_old, std::span<const RolloutGroup> groups,
                 const GuidanceContext& guidance);
/// Gradient of opsd_loss (descent direction is its negative).
Table opsd_grad(const PolicyParams& params, const PolicyParams& params_old, std::span<const RolloutGroup> groups,
                const GuidanceContext& guidance);

struct StepMetrics {
  int step = 0;
  std::string mode;
  double exact_success = 0.0;  // mean exact unguided success over all tasks
  double trainable_frac = 0.0;
  double mean_k_star = 0.0;    // NaN when no guided group was used
  double mean_reward = 0.0;
  double grad_norm = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
};

struct SelectionRecord {
  int step = 0;
  int task_id = 0;
  SelectionResult result;
  std::optional<bool> reverify_agreed;
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const SelectionRecord&)> on_selection;
  std::function<void(int step, const RolloutGroup&)> on_group;  // after advantages are assigned
  std::function<void(int step, const std::vector<PolicyParams>&)> on_checkpoint;
  int checkpoint_interval = 0;
};

struct TrainResult {
  std::vector<PolicyParams> params;  // one per task
  std::vector<StepMetrics> log;
};

/// Mean exact unguided success of per-task policies.
double mean_exact_success(std::span<const Task> tasks, std::span<const PolicyParams> params);

/// Runs `config.steps` training steps. Every task owns its own logit table
/// initialised from `init`; the frozen initial copy is the KL reference.
/// Throws NumericError on a non-finite gradient.
TrainResult train(std::span<const Task> tasks, const PolicyParams& init, const TrainConfig& config,
                  std::uint64_t seed, const TrainHooks& hooks = {});

}  // namespace guidelab
