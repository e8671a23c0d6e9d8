#include "guidelab/harness/taskset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace guidelab::harness {

namespace {

const std::vector<std::string> kPresets = {"easy", "medium", "hard"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

DifficultyMix parse_mix(const std::string& text) {
  DifficultyMix mix;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("difficulty mix entry needs name:proportion: " + item);
    const std::string name = trim(item.substr(0, colon));
    if (std::find(kPresets.begin(), kPresets.end(), name) == kPresets.end())
      throw std::invalid_argument("unknown difficulty preset: " + name);
    const std::string value = trim(item.substr(colon + 1));
    std::size_t used = 0;
    const double p = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("bad proportion: " + item);
    mix[name] = p;
  }
  return mix;
}

std::string format_mix(const DifficultyMix& mix) {
  std::string out;
  for (const auto& name : kPresets) {
    auto it = mix.find(name);
    if (it == mix.end()) continue;
    if (!out.empty()) out += ',';
    out += name + ':' + format_double(it->second);
  }
  return out;
}

Task make_preset_task(const EnvShape& shape, const std::string& difficulty, int id, Rng& rng, int barrier_start) {
  std::vector<Action> canonical(static_cast<std::size_t>(shape.horizon));
  for (auto& a : canonical) a = uniform_index(rng, shape.easy_safe_size);

  std::vector<BarrierInterval> barriers;
  if (difficulty == "medium" || difficulty == "hard") {
    const int len = difficulty == "medium" ? shape.medium_barrier_len : shape.hard_barrier_len;
    if (len < 1 || len > shape.horizon) throw std::invalid_argument("barrier length does not fit the horizon");
    const int start = barrier_start >= 0 ? barrier_start : uniform_index(rng, shape.horizon - len + 1);
    barriers.push_back({start, len});
    // Barrier steps may use any action, not only the easy ones.
    for (int t = start; t < start + len; ++t) canonical[static_cast<std::size_t>(t)] = uniform_index(rng, shape.alphabet);
  } else if (difficulty != "easy") {
    throw std::invalid_argument("unknown difficulty preset: " + difficulty);
  }

  auto chain = make_barrier_chain(shape.horizon, shape.alphabet, shape.easy_safe_size, barriers, shape.leak, canonical);
  Task task;
  task.id = id;
  task.difficulty = difficulty;
  task.env = std::move(chain.spec);
  task.reference.actions = std::move(chain.canonical);
  if (task.env.leak == 0.0 && replay_reward(task.env, task.reference.actions) != 1)
    throw std::logic_error("generated reference plan is not a success path");
  return task;
}

TaskSet generate_taskset(const EnvShape& shape, const DifficultyMix& mix, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("generate_taskset: count must be >= 1");
  double total = 0.0;
  for (const auto& [name, p] : mix) {
    if (!(p >= 0.0)) throw std::invalid_argument("generate_taskset: negative proportion");
    total += p;
  }
  if (mix.empty() || std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("generate_taskset: proportions must sum to 1");

  std::vector<int> counts;
  std::vector<double> remainders;
  int assigned = 0;
  for (const auto& name : kPresets) {
    const auto it = mix.find(name);
    const double exact = it == mix.end() ? 0.0 : it->second * count;
    counts.push_back(static_cast<int>(std::floor(exact + 1e-12)));
    remainders.push_back(exact - counts.back());
    assigned += counts.back();
  }
  while (assigned < count) {
    const auto i = static_cast<std::size_t>(std::max_element(remainders.begin(), remainders.end()) - remainders.begin());
    ++counts[i];
    remainders[i] = -1.0;
    ++assigned;
  }

  TaskSet set;
  int id = 0;
  for (std::size_t p = 0; p < kPresets.size(); ++p) {
    for (int c = 0; c < counts[p]; ++c, ++id) {
      Rng rng(derive_stream(seed, {static_cast<std::uint64_t>(id)}));
      set.tasks.push_back(make_preset_task(shape, kPresets[p], id, rng));
    }
  }
  return set;
}

nlohmann::json taskset_to_json(const TaskSet& set) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["tasks"] = nlohmann::json::array();
  for (const auto& t : set.tasks) {
    nlohmann::json j;
    j["id"] = t.id;
    j["difficulty"] = t.difficulty;
    j["env"] = env_to_json(t.env);
    j["reference"] = t.reference.actions;
    j["provenance"] = t.reference.noised ? "noised" : "clean";
    j["noise_ratio"] = t.reference.noise_ratio;
    doc["tasks"].push_back(std::move(j));
  }
  return doc;
}

TaskSet taskset_from_json(const nlohmann::json& doc) {
  if (doc.at("version").get<int>() != 1) throw std::invalid_argument("task set: unsupported version");
  TaskSet set;
  for (const auto& j : doc.at("tasks")) {
    Task t;
    t.id = j.at("id").get<int>();
    t.difficulty = j.at("difficulty").get<std::string>();
    t.env = env_from_json(j.at("env"));
    t.reference.actions = j.at("reference").get<std::vector<Action>>();
    t.reference.noised = j.at("provenance").get<std::string>() == "noised";
    t.reference.noise_ratio = j.at("noise_ratio").get<double>();
    set.tasks.push_back(std::move(t));
  }
  return set;
}

std::string taskset_hash(const TaskSet& set) { return hex64(fnv1a64(taskset_to_json(set).dump())); }

EnvSpec random_env(Rng& rng, int max_horizon, int max_alphabet, double max_leak) {
  if (max_horizon < 1 || max_alphabet < 2) throw std::invalid_argument("random_env: need T >= 1 and A >= 2");
  EnvSpec env;
  env.horizon = 1 + uniform_index(rng, max_horizon);
  env.alphabet = 2 + uniform_index(rng, max_alphabet - 1);
  for (int t = 0; t < env.horizon; ++t) {
    std::vector<Action> safe;
    for (Action a = 0; a < env.alphabet; ++a)
      if (uniform01(rng) < 0.5) safe.push_back(a);
    if (safe.empty()) safe.push_back(uniform_index(rng, env.alphabet));
    env.safe_sets.push_back(std::move(safe));
  }
  env.leak = uniform01(rng) * max_leak;
  env.validate();
  return env;
}

PolicyParams random_policy(Rng& rng, int horizon, int alphabet, double scale, double guidance_strength) {
  PolicyParams p = uniform_policy(horizon, alphabet, guidance_strength);
  for (auto& v : p.logits.data()) v = scale * (2.0 * uniform01(rng) - 1.0);
  return p;
}

TaskSet with_noise(const TaskSet& set, double ratio, std::uint64_t seed) {
  TaskSet out = set;
  for (auto& t : out.tasks) {
    Rng rng(derive_stream(seed, {0x6e6f697365ULL, static_cast<std::uint64_t>(t.id)}));
    t.reference = inject_noise(t.reference, ratio, t.env.alphabet, rng);
  }
  return out;
}

}  // namespace guidelab::harness
