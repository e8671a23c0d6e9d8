#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/policy.hpp"
#include "guidelab/task.hpp"

namespace guidelab::harness {

/// Shape shared by every generated env.
struct EnvShape {
  int horizon = 12;
  int alphabet = 8;
  int easy_safe_size = 6;
  double leak = 0.0;
  int medium_barrier_len = 2;
  int hard_barrier_len = 4;
  bool operator==(const EnvShape&) const = default;
};

/// Difficulty preset -> proportion. Recognised presets: easy (no barrier),
/// medium (one short barrier), hard (one long barrier).
using DifficultyMix = std::map<std::string, double>;

DifficultyMix parse_mix(const std::string& text);  // "easy:0.5,hard:0.5"
std::string format_mix(const DifficultyMix& mix);

struct TaskSet {
  std::vector<Task> tasks;
  bool operator==(const TaskSet&) const = default;
};

/// Deterministic in (shape, mix, count, seed). Counts per preset use
/// largest-remainder rounding in the order easy, medium, hard.
TaskSet generate_taskset(const EnvShape& shape, const DifficultyMix& mix, int count, std::uint64_t seed);

/// A single preset instance, with the barrier placed at `barrier_start`
/// (or at a random start when negative).
Task make_preset_task(const EnvShape& shape, const std::string& difficulty, int id, Rng& rng, int barrier_start = -1);

nlohmann::json taskset_to_json(const TaskSet& set);
TaskSet taskset_from_json(const nlohmann::json& doc);
std::string taskset_hash(const TaskSet& set);

/// Random env for property checks: horizon in [1, max_horizon], alphabet in
/// [2, max_alphabet], every safe set a non-empty random subset, leak in
/// [0, max_leak).
EnvSpec random_env(Rng& rng, int max_horizon, int max_alphabet, double max_leak = 0.0);
/// Logits drawn uniformly from [-scale, scale].
PolicyParams random_policy(Rng& rng, int horizon, int alphabet, double scale,
                           double guidance_strength = kDefaultGuidanceStrength);

/// Replaces each reference with a noised copy (seeded per task id).
TaskSet with_noise(const TaskSet& set, double ratio, std::uint64_t seed);

}  // namespace guidelab::harness
