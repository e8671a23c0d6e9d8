#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/common.hpp"

namespace guidelab {

/// Finite-horizon sparse-reward chain. At step t the episode stays live
/// only if the action is in safe_sets[t]; reward is 1 iff live after the
/// last step. A non-zero leak kills a live episode with that probability
/// even on a safe action.
struct EnvSpec {
  int horizon = 0;
  int alphabet = 0;
  std::vector<std::vector<Action>> safe_sets;  // sorted, one per step
  double leak = 0.0;

  /// Throws std::invalid_argument on any broken invariant.
  void validate() const;
  bool is_safe(int t, Action a) const;
  bool operator==(const EnvSpec&) const = default;
};

struct BarrierInterval {
  int start = 0;
  int length = 0;
  int end() const { return start + length; }
  auto operator<=>(const BarrierInterval&) const = default;
};

/// An env together with its canonical safe action per step. The canonical
/// sequence is a guaranteed success path and doubles as the reference plan.
struct BarrierChain {
  EnvSpec spec;
  std::vector<Action> canonical;
};

/// Builds a barrier chain. Barrier steps get the singleton {canonical[t]};
/// every other step gets actions [0, easy_safe_size). When `canonical` is
/// empty it defaults to t % easy_safe_size.
BarrierChain make_barrier_chain(int horizon, int alphabet, int easy_safe_size,
                                std::vector<BarrierInterval> barriers, double leak = 0.0,
                                std::vector<Action> canonical = {});

struct State {
  int t = 0;
  bool alive = true;
  bool operator==(const State&) const = default;
};

/// Transition. The rng is consulted only when leak > 0 and the move is safe.
State step(const EnvSpec& spec, State state, Action action, Rng& rng);
/// Leak-free transition; throws if spec.leak > 0.
State step(const EnvSpec& spec, State state, Action action);

/// Outcome of a visited state sequence s_0..s_T (horizon + 1 entries).
int reward(const EnvSpec& spec, std::span<const State> visited);
/// Deterministic replay of an action sequence (leak must be 0).
int replay_reward(const EnvSpec& spec, std::span<const Action> actions);

/// Best achievable success probability from `state` (backward induction).
double psi(const EnvSpec& spec, State state);
/// Psi(alive, t) for t = 0..T.
std::vector<double> psi_alive_table(const EnvSpec& spec);

struct ReachabilityProfile {
  std::vector<double> mass;                    // M_0..M_T
  std::vector<std::optional<double>> retention;  // kappa_0..kappa_{T-1}; empty where M_t == 0
  std::vector<BarrierInterval> barriers;       // maximal runs with kappa_t < threshold
  bool degenerate = false;                     // some M_t reached exactly 0
  int first_zero = -1;
};

inline constexpr double kDefaultBarrierThreshold = 0.3;

/// Exact forward propagation of the live mass under per-step action
/// distributions (rows of `step_probs`, live-state behaviour only).
ReachabilityProfile mass_profile(const EnvSpec& spec, const Table& step_probs,
                                 double barrier_threshold = kDefaultBarrierThreshold);

/// Exact P(Y = 1) under the step distributions.
double exact_success(const EnvSpec& spec, const Table& step_probs);
/// Exact P(Y = 1 | start) continuing with the step distributions from start.t.
double exact_success_from(const EnvSpec& spec, const Table& step_probs, State start);

inline constexpr int kEnvFormatVersion = 1;

nlohmann::json env_to_json(const EnvSpec& spec);
EnvSpec env_from_json(const nlohmann::json& doc);
/// Hex content hash of the canonical JSON serialization.
std::string env_hash(const EnvSpec& spec);

}  // namespace guidelab
