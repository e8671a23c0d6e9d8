#include "guidelab/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace guidelab {

namespace {

void check_step_probs(const EnvSpec& spec, const Table& step_probs) {
  if (step_probs.rows() != spec.horizon || step_probs.cols() != spec.alphabet)
    throw std::invalid_argument("step distribution shape does not match env");
}

}  // namespace

void EnvSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon must be >= 1");
  if (alphabet < 2) throw std::invalid_argument("EnvSpec: alphabet must be >= 2");
  if (!(leak >= 0.0 && leak < 1.0)) throw std::invalid_argument("EnvSpec: leak must be in [0, 1)");
  if (static_cast<int>(safe_sets.size()) != horizon)
    throw std::invalid_argument("EnvSpec: need one safe set per step");
  for (const auto& set : safe_sets) {
    if (set.empty()) throw std::invalid_argument("EnvSpec: empty safe set");
    if (!std::is_sorted(set.begin(), set.end()) ||
        std::adjacent_find(set.begin(), set.end()) != set.end())
      throw std::invalid_argument("EnvSpec: safe set must be sorted and unique");
    if (set.front() < 0 || set.back() >= alphabet)
      throw std::invalid_argument("EnvSpec: safe action out of range");
  }
}

bool EnvSpec::is_safe(int t, Action a) const {
  const auto& set = safe_sets.at(static_cast<std::size_t>(t));
  return std::binary_search(set.begin(), set.end(), a);
}

BarrierChain make_barrier_chain(int horizon, int alphabet, int easy_safe_size,
                                std::vector<BarrierInterval> barriers, double leak,
                                std::vector<Action> canonical) {
  if (horizon < 1 || alphabet < 2) throw std::invalid_argument("make_barrier_chain: bad shape");
  if (easy_safe_size < 1 || easy_safe_size > alphabet)
    throw std::invalid_argument("make_barrier_chain: easy_safe_size must be in [1, A]");

  std::sort(barriers.begin(), barriers.end());
  std::vector<bool> in_barrier(static_cast<std::size_t>(horizon), false);
  for (std::size_t i = 0; i < barriers.size(); ++i) {
    const auto& b = barriers[i];
    if (b.length < 1 || b.start < 0 || b.end() > horizon)
      throw std::invalid_argument("make_barrier_chain: barrier interval out of range");
    if (i > 0 && barriers[i - 1].end() > b.start)
      throw std::invalid_argument("make_barrier_chain: overlapping barrier intervals");
    for (int t = b.start; t < b.end(); ++t) in_barrier[static_cast<std::size_t>(t)] = true;
  }

  if (canonical.empty()) {
    canonical.resize(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) canonical[static_cast<std::size_t>(t)] = t % easy_safe_size;
  }
  if (static_cast<int>(canonical.size()) != horizon)
    throw std::invalid_argument("make_barrier_chain: canonical length must equal horizon");

  BarrierChain chain;
  chain.spec.horizon = horizon;
  chain.spec.alphabet = alphabet;
  chain.spec.leak = leak;
  for (int t = 0; t < horizon; ++t) {
    const Action c = canonical[static_cast<std::size_t>(t)];
    if (in_barrier[static_cast<std::size_t>(t)]) {
      if (c < 0 || c >= alphabet) throw std::invalid_argument("make_barrier_chain: canonical action out of range");
      chain.spec.safe_sets.push_back({c});
    } else {
      if (c < 0 || c >= easy_safe_size)
        throw std::invalid_argument("make_barrier_chain: canonical action must lie in the easy safe set");
      std::vector<Action> set(static_cast<std::size_t>(easy_safe_size));
      for (int a = 0; a < easy_safe_size; ++a) set[static_cast<std::size_t>(a)] = a;
      chain.spec.safe_sets.push_back(std::move(set));
    }
  }
  chain.canonical = std::move(canonical);
  chain.spec.validate();
  return chain;
}

namespace {

void check_transition(const EnvSpec& spec, State state, Action action) {
  if (state.t < 0 || state.t >= spec.horizon) throw std::out_of_range("step: t outside [0, T)");
  if (action < 0 || action >= spec.alphabet) throw std::out_of_range("step: action outside [0, A)");
}

}  // namespace

State step(const EnvSpec& spec, State state, Action action, Rng& rng) {
  check_transition(spec, state, action);
  bool alive = state.alive && spec.is_safe(state.t, action);
  if (alive && spec.leak > 0.0) alive = uniform01(rng) >= spec.leak;
  return {state.t + 1, alive};
}

State step(const EnvSpec& spec, State state, Action action) {
  if (spec.leak > 0.0) throw std::invalid_argument("step: leaky env needs a random stream");
  check_transition(spec, state, action);
  return {state.t + 1, state.alive && spec.is_safe(state.t, action)};
}

int reward(const EnvSpec& spec, std::span<const State> visited) {
  if (static_cast<int>(visited.size()) != spec.horizon + 1)
    throw std::invalid_argument("reward: trajectory must have exactly T steps");
  return visited.back().alive ? 1 : 0;
}

int replay_reward(const EnvSpec& spec, std::span<const Action> actions) {
  if (static_cast<int>(actions.size()) != spec.horizon)
    throw std::invalid_argument("replay_reward: trajectory must have exactly T steps");
  State s{};
  for (Action a : actions) s = step(spec, s, a);
  return s.alive ? 1 : 0;
}

std::vector<double> psi_alive_table(const EnvSpec& spec) {
  std::vector<double> value(static_cast<std::size_t>(spec.horizon) + 1, 0.0);
  value.back() = 1.0;
  for (int t = spec.horizon - 1; t >= 0; --t) {
    double best = 0.0;
    for (Action a = 0; a < spec.alphabet; ++a) {
      const double q = spec.is_safe(t, a) ? (1.0 - spec.leak) * value[static_cast<std::size_t>(t) + 1] : 0.0;
      best = std::max(best, q);
    }
    value[static_cast<std::size_t>(t)] = best;
  }
  return value;
}

double psi(const EnvSpec& spec, State state) {
  if (state.t < 0 || state.t > spec.horizon) throw std::out_of_range("psi: t outside [0, T]");
  if (!state.alive) return 0.0;
  return psi_alive_table(spec)[static_cast<std::size_t>(state.t)];
}

namespace {

// Probability of staying live through step t given live before it.
double live_retention(const EnvSpec& spec, const Table& step_probs, int t) {
  double safe_mass = 0.0;
  for (Action a : spec.safe_sets[static_cast<std::size_t>(t)]) safe_mass += step_probs(t, a);
  return safe_mass * (1.0 - spec.leak);
}

}  // namespace

ReachabilityProfile mass_profile(const EnvSpec& spec, const Table& step_probs, double barrier_threshold) {
  check_step_probs(spec, step_probs);
  const auto psi_alive = psi_alive_table(spec);
  const auto T = static_cast<std::size_t>(spec.horizon);

  ReachabilityProfile profile;
  profile.mass.resize(T + 1);
  profile.retention.resize(T);

  double live = 1.0;
  profile.mass[0] = psi_alive[0];
  for (std::size_t t = 0; t < T; ++t) {
    live *= live_retention(spec, step_probs, static_cast<int>(t));
    profile.mass[t + 1] = live * psi_alive[t + 1];
  }

  for (std::size_t t = 0; t < T; ++t) {
    if (profile.mass[t] > 0.0) profile.retention[t] = profile.mass[t + 1] / profile.mass[t];
  }
  for (std::size_t t = 0; t <= T; ++t) {
    if (profile.mass[t] == 0.0) {
      profile.degenerate = true;
      profile.first_zero = static_cast<int>(t);
      break;
    }
  }

  int run_start = -1;
  for (std::size_t t = 0; t <= T; ++t) {
    const bool low = t < T && profile.retention[t].has_value() && *profile.retention[t] < barrier_threshold;
    if (low && run_start < 0) run_start = static_cast<int>(t);
    if (!low && run_start >= 0) {
      profile.barriers.push_back({run_start, static_cast<int>(t) - run_start});
      run_start = -1;
    }
  }
  return profile;
}

double exact_success(const EnvSpec& spec, const Table& step_probs) {
  return exact_success_from(spec, step_probs, State{0, true});
}

double exact_success_from(const EnvSpec& spec, const Table& step_probs, State start) {
  check_step_probs(spec, step_probs);
  if (start.t < 0 || start.t > spec.horizon) throw std::out_of_range("exact_success_from: bad start");
  if (!start.alive) return 0.0;
  double live = 1.0;
  for (int t = start.t; t < spec.horizon; ++t) live *= live_retention(spec, step_probs, t);
  return live;
}

nlohmann::json env_to_json(const EnvSpec& spec) {
  nlohmann::json doc;
  doc["version"] = kEnvFormatVersion;
  doc["T"] = spec.horizon;
  doc["A"] = spec.alphabet;
  doc["safe_sets"] = spec.safe_sets;
  doc["leak"] = spec.leak;
  return doc;
}

EnvSpec env_from_json(const nlohmann::json& doc) {
  if (doc.at("version").get<int>() != kEnvFormatVersion)
    throw std::invalid_argument("env_from_json: unsupported version");
  EnvSpec spec;
  spec.horizon = doc.at("T").get<int>();
  spec.alphabet = doc.at("A").get<int>();
  spec.safe_sets = doc.at("safe_sets").get<std::vector<std::vector<Action>>>();
  spec.leak = doc.at("leak").get<double>();
  spec.validate();
  return spec;
}

std::string env_hash(const EnvSpec& spec) { return hex64(fnv1a64(env_to_json(spec).dump())); }

}  // namespace guidelab
