#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/common.hpp"
#include "guidelab/policy.hpp"

namespace guidelab {

/// Action-only reference plan for one task.
struct ReferenceTrajectory {
  std::vector<Action> actions;
  bool noised = false;
  double noise_ratio = 0.0;

  int length() const { return static_cast<int>(actions.size()); }
  bool operator==(const ReferenceTrajectory&) const = default;
};

/// g_k: the first k reference actions.
struct GuidanceLevel {
  int k = 0;
  GuidanceContext context;
};

GuidanceLevel level(const ReferenceTrajectory& ref, int k);

/// Inserts ceil(ratio * L) uniformly random actions at uniformly random
/// positions. The original plan survives as a subsequence.
ReferenceTrajectory inject_noise(const ReferenceTrajectory& ref, double ratio, int alphabet, Rng& rng);

struct SelectionResult {
  std::optional<int> k_star;
  std::map<int, bool> evaluations;   // level -> group had a success
  std::vector<int> evaluated_levels;  // probe order
  int budget_used = 0;
};

/// Smallest level in [1, K] whose group oracle succeeds, by binary search
/// that trusts monotonicity. Each distinct level is probed at most once.
SelectionResult find_min_level(const std::function<bool(int)>& group_success, int max_level, int budget);

/// ceil(log2 K) + 2.
int default_search_budget(int max_level);

/// True iff the whole unguided group failed: max reward < delta.
bool fallback_trigger(std::span<const double> rewards, double delta);

nlohmann::json selection_trace(int task_id, const SelectionResult& result);

}  // namespace guidelab
