#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidelab/common.hpp"

namespace guidelab {

inline constexpr double kDefaultGuidanceStrength = 4.0;

/// Tabular softmax policy over (step, action). The same logits serve the
/// unguided policy and the guidance-conditioned one; conditioning adds a
/// fixed bonus `guidance_strength` to the recommended action's logit.
struct PolicyParams {
  Table logits;
  double guidance_strength = kDefaultGuidanceStrength;

  int horizon() const { return logits.rows(); }
  int alphabet() const { return logits.cols(); }
  void validate() const;
  bool operator==(const PolicyParams&) const = default;
};

PolicyParams uniform_policy(int horizon, int alphabet, double guidance_strength = kDefaultGuidanceStrength);

/// Positional reference plan: step t is recommended plan[t] while t < size().
class GuidanceContext {
 public:
  GuidanceContext() = default;
  explicit GuidanceContext(std::vector<Action> plan) : plan_(std::move(plan)) {}

  std::optional<Action> recommended(int t) const {
    if (t < 0 || t >= static_cast<int>(plan_.size())) return std::nullopt;
    return plan_[static_cast<std::size_t>(t)];
  }
  const std::vector<Action>& plan() const { return plan_; }
  std::size_t size() const { return plan_.size(); }
  bool empty() const { return plan_.empty(); }
  bool operator==(const GuidanceContext&) const = default;

 private:
  std::vector<Action> plan_;
};

/// Logits at step t, optionally shifted by the guidance bonus.
std::vector<double> logits(const PolicyParams& params, int t, const GuidanceContext& ctx = {});
std::vector<double> logits(const PolicyParams& params, int t, std::optional<Action> recommended);

std::vector<double> probabilities(const PolicyParams& params, int t, std::optional<Action> recommended);

double log_prob(const PolicyParams& params, int t, Action action, const GuidanceContext& ctx = {});
double log_prob(const PolicyParams& params, int t, Action action, std::optional<Action> recommended);

/// Inverse-CDF categorical draw; consumes exactly one uniform.
Action sample_action(const PolicyParams& params, int t, const GuidanceContext& ctx, Rng& rng);
Action sample_from(std::span<const double> probs, Rng& rng);

/// d log pi(action | t, ctx) / d logits[t][.]; every other row is zero.
std::vector<double> grad_log_prob(const PolicyParams& params, int t, Action action,
                                  const GuidanceContext& ctx = {});

/// KL(p(.|t,ctx) || q(.|t,ctx)) for two parameter sets.
double kl_at_step(const PolicyParams& p, const PolicyParams& q, int t, const GuidanceContext& ctx = {});
double categorical_kl(std::span<const double> p, std::span<const double> q);

/// All per-step action distributions under one context (rows = steps).
Table step_distributions(const PolicyParams& params, const GuidanceContext& ctx = {});
Table step_log_distributions(const PolicyParams& params, const GuidanceContext& ctx = {});

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_to_json(const PolicyParams& params, const std::string& env_hash, int step);

struct Checkpoint {
  PolicyParams params;
  std::string env_hash;
  int step = 0;
};
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

}  // namespace guidelab
