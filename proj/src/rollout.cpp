#include "guidelab/rollout.hpp"

#include <cmath>
#include <stdexcept>

namespace guidelab {

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> out;
  out.reserve(trajectories.size());
  for (const auto& tr : trajectories) out.push_back(static_cast<double>(tr.reward));
  return out;
}

namespace {

struct Behaviour {
  Table probs;
  Table log_probs;
  GuidanceContext context;
  Source source = Source::unguided;
  int level = 0;
};

Behaviour make_behaviour(const EnvSpec& env, const PolicyParams& params, const std::optional<GuidanceLevel>& g) {
  if (params.horizon() != env.horizon || params.alphabet() != env.alphabet)
    throw std::invalid_argument("sample_group: policy shape does not match env");
  Behaviour b;
  if (g) {
    b.context = g->context;
    b.source = Source::guided;
    b.level = g->k;
  }
  b.probs = step_distributions(params, b.context);
  b.log_probs = step_log_distributions(params, b.context);
  return b;
}

Trajectory sample_one(const EnvSpec& env, const Behaviour& b, Rng& rng) {
  Trajectory tr;
  tr.source = b.source;
  tr.level = b.level;
  tr.steps.reserve(static_cast<std::size_t>(env.horizon));
  State s{};
  for (int t = 0; t < env.horizon; ++t) {
    const Action a = sample_from(b.probs.row(t), rng);
    tr.steps.push_back({s, a, b.log_probs(t, a), b.context.recommended(t)});
    s = step(env, s, a, rng);
  }
  tr.final_state = s;
  tr.reward = s.alive ? 1 : 0;
  return tr;
}

RolloutGroup make_group(int n, int task_id) {
  if (n < 1) throw std::invalid_argument("sample_group: N must be >= 1");
  RolloutGroup group;
  group.task_id = task_id;
  group.trajectories.resize(static_cast<std::size_t>(n));
  return group;
}

}  // namespace

RolloutGroup sample_group(const EnvSpec& env, const PolicyParams& params_old,
                          const std::optional<GuidanceLevel>& guidance, int n, std::uint64_t seed, int task_id) {
  auto group = make_group(n, task_id);
  const auto b = make_behaviour(env, params_old, guidance);
#pragma omp parallel for schedule(static) if (n >= kParallelGroupThreshold)
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_stream(seed, {static_cast<std::uint64_t>(task_id), static_cast<std::uint64_t>(i)}));
    group.trajectories[static_cast<std::size_t>(i)] = sample_one(env, b, rng);
  }
  return group;
}

RolloutGroup sample_group_serial(const EnvSpec& env, const PolicyParams& params_old,
                                 const std::optional<GuidanceLevel>& guidance, int n, std::uint64_t seed,
                                 int task_id) {
  auto group = make_group(n, task_id);
  const auto b = make_behaviour(env, params_old, guidance);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_stream(seed, {static_cast<std::uint64_t>(task_id), static_cast<std::uint64_t>(i)}));
    group.trajectories[static_cast<std::size_t>(i)] = sample_one(env, b, rng);
  }
  return group;
}

double exact_pass_at_k(const EnvSpec& env, const PolicyParams& params, State start, int k) {
  if (k < 1) throw std::invalid_argument("pass@K: K must be >= 1");
  const double p = exact_success_from(env, step_distributions(params), start);
  return 1.0 - std::pow(1.0 - p, k);
}

PassAtK empirical_pass_at_k(const EnvSpec& env, const PolicyParams& params, State start, int k, int n_trials,
                            std::uint64_t seed) {
  if (k < 1 || n_trials < 1) throw std::invalid_argument("pass@K: K and n_trials must be >= 1");
  if (start.t < 0 || start.t > env.horizon) throw std::out_of_range("pass@K: start step out of range");
  PassAtK out;
  out.exact = exact_pass_at_k(env, params, start, k);
  if (!start.alive) return out;

  const Table probs = step_distributions(params);
  long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits) if (n_trials >= 16)
  for (int trial = 0; trial < n_trials; ++trial) {
    bool any = false;
    for (int j = 0; j < k && !any; ++j) {
      Rng rng(derive_stream(seed, {static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(j)}));
      State s = start;
      for (int t = start.t; t < env.horizon; ++t) s = step(env, s, sample_from(probs.row(t), rng), rng);
      any = s.alive;
    }
    if (any) ++hits;
  }
  out.monte_carlo = static_cast<double>(hits) / n_trials;
  return out;
}

nlohmann::json trajectory_to_json(const Trajectory& traj, int task_id) {
  nlohmann::json rec;
  rec["task_id"] = task_id;
  rec["source"] = traj.source == Source::guided ? "guided" : "unguided";
  rec["level"] = traj.level;
  rec["reward"] = traj.reward;
  std::vector<Action> actions;
  std::vector<double> logp;
  std::vector<bool> alive;
  nlohmann::json recommended = nlohmann::json::array();
  for (const auto& s : traj.steps) {
    actions.push_back(s.action);
    logp.push_back(s.behavior_log_prob);
    alive.push_back(s.state.alive);
    recommended.push_back(s.recommended ? nlohmann::json(*s.recommended) : nlohmann::json(nullptr));
  }
  rec["actions"] = actions;
  rec["behavior_log_prob"] = logp;
  rec["alive_before"] = alive;
  rec["recommended"] = recommended;
  return rec;
}

}  // namespace guidelab
