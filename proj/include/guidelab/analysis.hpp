#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "guidelab/env.hpp"
#include "guidelab/guidance.hpp"
#include "guidelab/policy.hpp"
#include "guidelab/rollout.hpp"

namespace guidelab {

enum class DeltaLogitAggregation { max_abs, mean_abs };

/// Per step of a guided trajectory: size of the guided-minus-unguided logit
/// difference at the visited state.
std::vector<double> delta_logit_profile(const PolicyParams& params, const Trajectory& guided,
                                        DeltaLogitAggregation agg = DeltaLogitAggregation::max_abs);

struct BarrierRepair {
  double value = 0.0;  // log(M_guided / M_unguided) at barrier_end; +inf when undefined
  bool undefined = false;
  double guided_mass = 0.0;
  double unguided_mass = 0.0;
};

/// B_k from two exact mass propagations.
BarrierRepair barrier_repair(const EnvSpec& env, const PolicyParams& params, const GuidanceLevel& guidance,
                             int barrier_end);

/// Fraction of trajectories that are live before step t (t == T: at the end).
double alive_fraction(const RolloutGroup& group, int t);

struct RiskReport {
  int k = 0;
  std::vector<double> shift_samples;  // L_k(tau) per rollout
  double mean_shift = 0.0;
  double risk = 0.0;  // unbiased sample variance of the shifts
  double variance_sum = 0.0;    // sum_j Var(X_j)
  double covariance_sum = 0.0;  // 2 sum_{j<j'} Cov(X_j, X_j')
};

/// Builds a report from per-rollout, per-step log-ratio terms X[i][j].
RiskReport risk_from_step_terms(int k, const std::vector<std::vector<double>>& terms);

/// Samples n guided rollouts at `guidance` and measures the cumulative
/// unguided/guided log-ratio along each.
RiskReport risk_report(const EnvSpec& env, const PolicyParams& params, const GuidanceLevel& guidance,
                       int n_rollouts, std::uint64_t seed);

std::vector<RiskReport> risk_curve(const EnvSpec& env, const PolicyParams& params, const ReferenceTrajectory& ref,
                                   std::span<const int> levels, int n_rollouts, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

/// Percentile bootstrap interval of the unbiased sample variance.
Interval bootstrap_variance_ci(std::span<const double> samples, int resamples, double confidence, std::uint64_t seed);

struct UtilityCurve {
  std::vector<double> benefit;
  std::vector<double> risk;
  std::vector<double> utility;  // benefit - lambda * risk
  double lambda = 1.0;
  int argmax = 0;
};

UtilityCurve utility_curve(std::span<const double> benefit, std::span<const double> risk, double lambda);

struct QEstimate {
  double q_hat = 0.0;
  double q_exact = 0.0;
  int trial_count = 0;
};

/// Group recovery probability at one level: Monte-Carlo over trial_count
/// groups of size n, plus the exact 1 - (1 - p_k)^n.
QEstimate estimate_q(const EnvSpec& env, const PolicyParams& params_old, const GuidanceLevel& guidance, int n,
                     double delta, int trial_count, std::uint64_t seed);

/// min{k : Q_hat[k] >= rho}, or nothing when no level qualifies.
std::optional<int> select_risk_constrained(std::span<const double> q_hat, std::span<const double> r_hat, double rho);

/// Smallest m with m >= log(2 (K + 1) / xi) / (2 margin^2).
int hoeffding_budget(double margin, int max_level, double xi);

/// Fraction of groups whose rewards are not all equal.
double trainable_fraction(std::span<const RolloutGroup> groups);

struct SelectionStudy {
  std::vector<double> q_hat;
  std::vector<double> q_exact;
  std::vector<double> r_hat;
  std::vector<int> trial_count;
  double rho = 0.0;
  double margin = 0.0;
  double xi = 0.0;
  std::optional<int> k_rho_star;
  int budget_m = 1;
};

/// Q_hat, exact Q and R_hat at every level 0..K, and the risk-constrained
/// choice. trial_count 0 uses the Hoeffding budget for (margin, K, xi).
SelectionStudy selection_study(const EnvSpec& env, const PolicyParams& params, const ReferenceTrajectory& ref,
                               int max_level, int n, double delta, double rho, double margin, double xi,
                               int risk_rollouts, std::uint64_t seed, int trial_count = 0);

struct BarrierProfileRow {
  int t = 0;
  double mass = 0.0;
  std::optional<double> retention;
  double pass_at_k = 0.0;     // exact, from the guided prefix state
  double pass_at_k_mc = 0.0;
  double delta_logit = 0.0;   // 0 at t == T
  bool alive = true;
};

/// Walks one guided rollout (the first successful one among a few draws, if
/// any) and reports unguided mass, retention, prefix Pass@K and the logit
/// shift at every prefix state.
std::vector<BarrierProfileRow> barrier_profile(const EnvSpec& env, const PolicyParams& params,
                                               const GuidanceLevel& guidance, int pass_k, int n_trials,
                                               std::uint64_t seed);

}  // namespace guidelab
