#include "guidelab/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace guidelab {

GuidanceLevel level(const ReferenceTrajectory& ref, int k) {
  if (k < 0 || k > ref.length()) throw std::out_of_range("level: k outside [0, L]");
  return {k, GuidanceContext(std::vector<Action>(ref.actions.begin(), ref.actions.begin() + k))};
}

ReferenceTrajectory inject_noise(const ReferenceTrajectory& ref, double ratio, int alphabet, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("inject_noise: ratio must be in [0, 1)");
  if (alphabet < 1) throw std::invalid_argument("inject_noise: alphabet must be positive");
  ReferenceTrajectory out = ref;
  const auto inserts = static_cast<int>(std::ceil(ratio * ref.length()));
  for (int i = 0; i < inserts; ++i) {
    const int pos = uniform_index(rng, out.length() + 1);
    const Action a = uniform_index(rng, alphabet);
    out.actions.insert(out.actions.begin() + pos, a);
  }
  if (inserts > 0) {
    out.noised = true;
    out.noise_ratio = ratio;
  }
  return out;
}

int default_search_budget(int max_level) {
  if (max_level <= 1) return 2;
  return static_cast<int>(std::ceil(std::log2(static_cast<double>(max_level)))) + 2;
}

SelectionResult find_min_level(const std::function<bool(int)>& group_success, int max_level, int budget) {
  if (budget < 1) throw std::invalid_argument("find_min_level: budget must be >= 1");
  SelectionResult result;
  int lo = 1;
  int hi = max_level;
  while (lo <= hi && result.budget_used < budget) {
    const int mid = lo + (hi - lo) / 2;
    auto it = result.evaluations.find(mid);
    bool ok;
    if (it != result.evaluations.end()) {
      ok = it->second;
    } else {
      ok = group_success(mid);
      result.evaluations.emplace(mid, ok);
      result.evaluated_levels.push_back(mid);
      ++result.budget_used;
    }
    if (ok) {
      result.k_star = mid;
      hi = mid - 1;
    } else {
      lo = mid + 1;
    }
  }
  return result;
}

bool fallback_trigger(std::span<const double> rewards, double delta) {
  if (rewards.empty()) throw std::invalid_argument("fallback_trigger: empty group");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("fallback_trigger: delta must be in (0, 1]");
  return *std::max_element(rewards.begin(), rewards.end()) < delta;
}

nlohmann::json selection_trace(int task_id, const SelectionResult& result) {
  nlohmann::json rec;
  rec["task_id"] = task_id;
  rec["evaluated_levels"] = result.evaluated_levels;
  std::vector<bool> outcomes;
  for (int k : result.evaluated_levels) outcomes.push_back(result.evaluations.at(k));
  rec["outcomes"] = outcomes;
  rec["k_star"] = result.k_star ? nlohmann::json(*result.k_star) : nlohmann::json(nullptr);
  rec["budget_used"] = result.budget_used;
  return rec;
}

}  // namespace guidelab
