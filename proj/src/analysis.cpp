#include "guidelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace guidelab {

std::vector<double> delta_logit_profile(const PolicyParams& params, const Trajectory& guided,
                                        DeltaLogitAggregation agg) {
  std::vector<double> out;
  out.reserve(guided.steps.size());
  for (const auto& st : guided.steps) {
    const auto with = logits(params, st.state.t, st.recommended);
    const auto without = logits(params, st.state.t, std::nullopt);
    double acc = 0.0;
    for (std::size_t a = 0; a < with.size(); ++a) {
      const double d = std::abs(with[a] - without[a]);
      acc = agg == DeltaLogitAggregation::max_abs ? std::max(acc, d) : acc + d;
    }
    if (agg == DeltaLogitAggregation::mean_abs) acc /= static_cast<double>(with.size());
    out.push_back(acc);
  }
  return out;
}

BarrierRepair barrier_repair(const EnvSpec& env, const PolicyParams& params, const GuidanceLevel& guidance,
                             int barrier_end) {
  if (barrier_end < 0 || barrier_end > env.horizon) throw std::out_of_range("barrier_repair: barrier_end outside [0, T]");
  BarrierRepair out;
  out.guided_mass = mass_profile(env, step_distributions(params, guidance.context)).mass[static_cast<std::size_t>(barrier_end)];
  out.unguided_mass = mass_profile(env, step_distributions(params)).mass[static_cast<std::size_t>(barrier_end)];
  if (out.unguided_mass == 0.0) {
    out.undefined = true;
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = std::log(out.guided_mass / out.unguided_mass);
  return out;
}

double alive_fraction(const RolloutGroup& group, int t) {
  if (group.trajectories.empty()) throw std::invalid_argument("alive_fraction: empty group");
  long alive = 0;
  for (const auto& tr : group.trajectories) {
    const int T = static_cast<int>(tr.steps.size());
    if (t < 0 || t > T) throw std::out_of_range("alive_fraction: step out of range");
    const bool live = t == T ? tr.final_state.alive : tr.steps[static_cast<std::size_t>(t)].state.alive;
    if (live) ++alive;
  }
  return static_cast<double>(alive) / static_cast<double>(group.trajectories.size());
}

RiskReport risk_from_step_terms(int k, const std::vector<std::vector<double>>& terms) {
  if (terms.size() < 2) throw std::invalid_argument("risk report needs at least 2 rollouts");
  const std::size_t n = terms.size();
  const std::size_t T = terms.front().size();
  for (const auto& row : terms)
    if (row.size() != T) throw std::invalid_argument("risk report: ragged step terms");

  RiskReport rep;
  rep.k = k;
  rep.shift_samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) rep.shift_samples[i] = std::accumulate(terms[i].begin(), terms[i].end(), 0.0);
  rep.mean_shift = std::accumulate(rep.shift_samples.begin(), rep.shift_samples.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : rep.shift_samples) ss += (x - rep.mean_shift) * (x - rep.mean_shift);
  const double denom = static_cast<double>(n - 1);
  rep.risk = ss / denom;

  std::vector<double> means(T, 0.0);
  for (const auto& row : terms)
    for (std::size_t j = 0; j < T; ++j) means[j] += row[j];
  for (auto& m : means) m /= static_cast<double>(n);

  for (std::size_t j = 0; j < T; ++j) {
    double v = 0.0;
    for (const auto& row : terms) v += (row[j] - means[j]) * (row[j] - means[j]);
    rep.variance_sum += v / denom;
    for (std::size_t jj = j + 1; jj < T; ++jj) {
      double c = 0.0;
      for (const auto& row : terms) c += (row[j] - means[j]) * (row[jj] - means[jj]);
      rep.covariance_sum += 2.0 * c / denom;
    }
  }
  return rep;
}

RiskReport risk_report(const EnvSpec& env, const PolicyParams& params, const GuidanceLevel& guidance,
                       int n_rollouts, std::uint64_t seed) {
  if (n_rollouts < 2) throw std::invalid_argument("risk_report: n_rollouts must be >= 2");
  const auto group = sample_group(env, params, guidance, n_rollouts, seed, guidance.k);
  const Table unguided = step_log_distributions(params);
  const Table guided = step_log_distributions(params, guidance.context);
  std::vector<std::vector<double>> terms(group.trajectories.size());
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const auto& tr = group.trajectories[i];
    terms[i].reserve(tr.steps.size());
    for (const auto& st : tr.steps)
      terms[i].push_back(unguided(st.state.t, st.action) - guided(st.state.t, st.action));
  }
  return risk_from_step_terms(guidance.k, terms);
}

std::vector<RiskReport> risk_curve(const EnvSpec& env, const PolicyParams& params, const ReferenceTrajectory& ref,
                                   std::span<const int> levels, int n_rollouts, std::uint64_t seed) {
  std::vector<RiskReport> out;
  out.reserve(levels.size());
  for (int k : levels)
    out.push_back(risk_report(env, params, level(ref, k), n_rollouts, derive_stream(seed, {static_cast<std::uint64_t>(k)})));
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) rank[order[q]] = r;
    i = j + 1;
  }
  return rank;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double sample_variance(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / (n - 1.0);
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

Interval bootstrap_variance_ci(std::span<const double> samples, int resamples, double confidence, std::uint64_t seed) {
  if (samples.size() < 2 || resamples < 1) throw std::invalid_argument("bootstrap: too few samples");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("bootstrap: confidence must be in (0,1)");
  Rng rng(seed);
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  std::vector<double> draw(samples.size());
  const int n = static_cast<int>(samples.size());
  for (auto& s : stats) {
    for (auto& d : draw) d = samples[static_cast<std::size_t>(uniform_index(rng, n))];
    s = sample_variance(draw);
  }
  std::sort(stats.begin(), stats.end());
  const double tail = 0.5 * (1.0 - confidence);
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::clamp(q * (resamples - 1), 0.0, static_cast<double>(resamples - 1)));
    return stats[idx];
  };
  return {at(tail), at(1.0 - tail)};
}

UtilityCurve utility_curve(std::span<const double> benefit, std::span<const double> risk, double lambda) {
  if (benefit.size() != risk.size()) throw std::invalid_argument("utility_curve: length mismatch");
  if (benefit.empty()) throw std::invalid_argument("utility_curve: empty input");
  if (!(lambda >= 0.0)) throw std::invalid_argument("utility_curve: lambda must be >= 0");
  UtilityCurve c;
  c.benefit.assign(benefit.begin(), benefit.end());
  c.risk.assign(risk.begin(), risk.end());
  c.lambda = lambda;
  c.utility.resize(benefit.size());
  for (std::size_t k = 0; k < benefit.size(); ++k) {
    c.utility[k] = benefit[k] - lambda * risk[k];
    if (c.utility[k] > c.utility[static_cast<std::size_t>(c.argmax)]) c.argmax = static_cast<int>(k);
  }
  return c;
}

QEstimate estimate_q(const EnvSpec& env, const PolicyParams& params_old, const GuidanceLevel& guidance, int n,
                     double delta, int trial_count, std::uint64_t seed) {
  if (trial_count < 1 || n < 1) throw std::invalid_argument("estimate_q: trial_count and N must be >= 1");
  QEstimate q;
  q.trial_count = trial_count;
  const double p = exact_success(env, step_distributions(params_old, guidance.context));
  q.q_exact = delta <= 1.0 && delta > 0.0 ? 1.0 - std::pow(1.0 - p, n) : 0.0;

  long hits = 0;
#pragma omp parallel for schedule(static) reduction(+ : hits) if (trial_count >= 16)
  for (int trial = 0; trial < trial_count; ++trial) {
    const auto g = sample_group_serial(env, params_old, guidance, n,
                                       derive_stream(seed, {static_cast<std::uint64_t>(trial)}), guidance.k);
    double best = 0.0;
    for (const auto& tr : g.trajectories) best = std::max(best, static_cast<double>(tr.reward));
    if (best >= delta) ++hits;
  }
  q.q_hat = static_cast<double>(hits) / trial_count;
  return q;
}

std::optional<int> select_risk_constrained(std::span<const double> q_hat, std::span<const double> r_hat, double rho) {
  if (q_hat.size() != r_hat.size()) throw std::invalid_argument("select_risk_constrained: length mismatch");
  for (std::size_t k = 0; k < q_hat.size(); ++k)
    if (q_hat[k] >= rho) return static_cast<int>(k);
  return std::nullopt;
}

int hoeffding_budget(double margin, int max_level, double xi) {
  if (!(margin > 0.0 && margin <= 0.5)) throw std::invalid_argument("hoeffding_budget: margin must be in (0, 0.5]");
  if (!(xi > 0.0 && xi < 1.0)) throw std::invalid_argument("hoeffding_budget: xi must be in (0, 1)");
  if (max_level < 0) throw std::invalid_argument("hoeffding_budget: K must be >= 0");
  const double bound = std::log(2.0 * (max_level + 1) / xi) / (2.0 * margin * margin);
  return std::max(1, static_cast<int>(std::ceil(bound)));
}

double trainable_fraction(std::span<const RolloutGroup> groups) {
  if (groups.empty()) throw std::invalid_argument("trainable_fraction: no groups");
  int trainable = 0;
  for (const auto& g : groups) {
    const auto r = g.rewards();
    if (r.empty()) continue;
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    if (*lo != *hi) ++trainable;
  }
  return static_cast<double>(trainable) / static_cast<double>(groups.size());
}

SelectionStudy selection_study(const EnvSpec& env, const PolicyParams& params, const ReferenceTrajectory& ref,
                               int max_level, int n, double delta, double rho, double margin, double xi,
                               int risk_rollouts, std::uint64_t seed, int trial_count) {
  if (max_level < 0 || max_level > ref.length()) throw std::out_of_range("selection_study: K outside [0, L]");
  SelectionStudy s;
  s.rho = rho;
  s.margin = margin;
  s.xi = xi;
  s.budget_m = hoeffding_budget(margin, max_level, xi);
  const int trials = trial_count > 0 ? trial_count : s.budget_m;
  for (int k = 0; k <= max_level; ++k) {
    const auto g = level(ref, k);
    const auto q = estimate_q(env, params, g, n, delta, trials, derive_stream(seed, {0, static_cast<std::uint64_t>(k)}));
    s.q_hat.push_back(q.q_hat);
    s.q_exact.push_back(q.q_exact);
    s.trial_count.push_back(q.trial_count);
    s.r_hat.push_back(risk_report(env, params, g, risk_rollouts, derive_stream(seed, {1, static_cast<std::uint64_t>(k)})).risk);
  }
  s.k_rho_star = select_risk_constrained(s.q_hat, s.r_hat, rho);
  return s;
}

std::vector<BarrierProfileRow> barrier_profile(const EnvSpec& env, const PolicyParams& params,
                                               const GuidanceLevel& guidance, int pass_k, int n_trials,
                                               std::uint64_t seed) {
  constexpr int kDraws = 64;
  const auto group = sample_group(env, params, guidance, kDraws, seed, 0);
  const Trajectory* chosen = &group.trajectories.front();
  for (const auto& tr : group.trajectories)
    if (tr.reward == 1) {
      chosen = &tr;
      break;
    }

  const auto profile = mass_profile(env, step_distributions(params));
  const auto shift = delta_logit_profile(params, *chosen);
  std::vector<BarrierProfileRow> rows;
  for (int t = 0; t <= env.horizon; ++t) {
    BarrierProfileRow row;
    row.t = t;
    row.mass = profile.mass[static_cast<std::size_t>(t)];
    if (t < env.horizon) {
      row.retention = profile.retention[static_cast<std::size_t>(t)];
      row.delta_logit = shift[static_cast<std::size_t>(t)];
    }
    const State s = t < env.horizon ? chosen->steps[static_cast<std::size_t>(t)].state : chosen->final_state;
    row.alive = s.alive;
    const auto pk = empirical_pass_at_k(env, params, s, pass_k, n_trials, derive_stream(seed, {1, static_cast<std::uint64_t>(t)}));
    row.pass_at_k = pk.exact;
    row.pass_at_k_mc = pk.monte_carlo;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace guidelab
