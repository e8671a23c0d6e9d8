#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/env.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/policy.hpp"

namespace guidelab {

enum class Source { unguided, guided };

struct StepRecord {
  State state;  // before the action
  Action action = 0;
  double behavior_log_prob = 0.0;
  std::optional<Action> recommended;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  Source source = Source::unguided;
  int level = 0;  // guidance level k for guided trajectories
  int reward = 0;
  State final_state;
};

struct RolloutGroup {
  int task_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;  // parallel to trajectories once assigned

  std::vector<double> rewards() const;
};

/// Groups at least this large are sampled with an OpenMP parallel loop.
inline constexpr int kParallelGroupThreshold = 64;

/// N independent trajectories under the behaviour snapshot `params_old`,
/// unguided when `guidance` is empty. Trajectory i draws from the stream
/// derive_stream(seed, {task_id, i}), so the result does not depend on the
/// thread count.
RolloutGroup sample_group(const EnvSpec& env, const PolicyParams& params_old,
                          const std::optional<GuidanceLevel>& guidance, int n, std::uint64_t seed,
                          int task_id = 0);

/// Single-threaded reference for sample_group; must produce identical groups.
RolloutGroup sample_group_serial(const EnvSpec& env, const PolicyParams& params_old,
                                 const std::optional<GuidanceLevel>& guidance, int n, std::uint64_t seed,
                                 int task_id = 0);

struct PassAtK {
  double monte_carlo = 0.0;
  double exact = 0.0;
};

/// Probability that at least one of K unguided continuations from `start`
/// succeeds: Monte-Carlo over n_trials batches plus the exact 1 - (1 - p)^K.
PassAtK empirical_pass_at_k(const EnvSpec& env, const PolicyParams& params, State start, int k, int n_trials,
                            std::uint64_t seed);
double exact_pass_at_k(const EnvSpec& env, const PolicyParams& params, State start, int k);

nlohmann::json trajectory_to_json(const Trajectory& traj, int task_id);

}  // namespace guidelab
