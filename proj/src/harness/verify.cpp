#include "guidelab/harness/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "guidelab/analysis.hpp"
#include "guidelab/harness/config.hpp"
#include "guidelab/harness/taskset.hpp"

namespace guidelab::harness {

namespace {

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// Hard env of the stall and internalisation criteria: barrier at steps 4..7.
Task hard_task() {
  auto chain = make_barrier_chain(12, 8, 6, {{4, 4}});
  Task t;
  t.id = 0;
  t.difficulty = "hard";
  t.env = chain.spec;
  t.reference.actions = chain.canonical;
  return t;
}

double final_success(std::span<const Task> tasks, const TrainConfig& cfg, std::uint64_t seed) {
  const auto& env = tasks.front().env;
  return train(tasks, uniform_policy(env.horizon, env.alphabet), cfg, seed).log.back().exact_success;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// Random small instance for objective checks: one unguided and one guided
// group sampled under params_old, with random advantages.
struct ObjectiveInstance {
  EnvSpec env;
  PolicyParams params, old, ref;
  ReferenceTrajectory plan;
  int k = 0;
  std::vector<RolloutGroup> groups;
  TrainConfig config;
};

ObjectiveInstance make_instance(Rng& rng, double perturb) {
  ObjectiveInstance in;
  in.env = random_env(rng, 4, 4, 0.1);
  const int T = in.env.horizon, A = in.env.alphabet;
  const double gamma = 0.5 + 4.0 * uniform01(rng);
  in.old = random_policy(rng, T, A, 1.0, gamma);
  in.params = in.old;
  for (auto& v : in.params.logits.data()) v += perturb * (2.0 * uniform01(rng) - 1.0);
  in.ref = random_policy(rng, T, A, 0.5, gamma);
  for (int t = 0; t < T; ++t) in.plan.actions.push_back(uniform_index(rng, A));
  in.k = 1 + uniform_index(rng, T);
  const std::uint64_t s = rng();
  in.groups.push_back(sample_group(in.env, in.old, std::nullopt, 4, derive_stream(s, {0})));
  in.groups.push_back(sample_group(in.env, in.old, level(in.plan, in.k), 4, derive_stream(s, {1})));
  for (auto& g : in.groups) {
    g.advantages.clear();
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) g.advantages.push_back(2.0 * uniform01(rng) - 1.0);
  }
  in.config.clip = 0.2;
  in.config.kl_coeff = 0.5 * uniform01(rng);
  in.config.ratio_mode = uniform01(rng) < 0.5 ? RatioMode::mixed : RatioMode::naive;
  return in;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

template <class F>
std::vector<double> central_difference(const PolicyParams& at, F f, double h) {
  std::vector<double> out(at.logits.data().size());
  PolicyParams p = at;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = p.logits.data()[i];
    p.logits.data()[i] = x + h;
    const double up = f(p);
    p.logits.data()[i] = x - h;
    const double down = f(p);
    p.logits.data()[i] = x;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double diff = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) diff = std::max(diff, std::abs(analytic[i] - fd[i]));
  return diff / std::max(max_abs(fd), 1e-10);
}

CheckOutcome barrier_stall() {
  const Task task = hard_task();
  const double pass8 = exact_pass_at_k(task.env, uniform_policy(12, 8), {0, true}, 8);
  TrainConfig cfg;
  cfg.mode = TrainMode::vanilla;
  cfg.steps = 200;
  const std::vector<Task> tasks{task};
  const auto result = train(tasks, uniform_policy(12, 8), cfg, 1);
  double trainable = 0.0;
  for (const auto& m : result.log) trainable += m.trainable_frac;
  trainable /= static_cast<double>(result.log.size());
  const double final = result.log.back().exact_success;
  return {pass8 < 1e-3 && trainable < 0.01 && final < 0.01,
          "pass@8=" + num(pass8) + " trainable=" + num(trainable) + " final=" + num(final),
          "pass@8 < 1e-3, trainable < 0.01, final < 0.01", ""};
}

CheckOutcome internalization() {
  const std::vector<Task> tasks{hard_task()};
  TrainConfig cfg;
  bool ok = true;
  std::string measured;
  for (auto seed : kSeeds) {
    cfg.mode = TrainMode::vanilla;
    const double vanilla = final_success(tasks, cfg, seed);
    cfg.mode = TrainMode::actguide;
    const double act = final_success(tasks, cfg, seed);
    ok = ok && act - vanilla >= 0.5;
    measured += (measured.empty() ? "" : " ") + std::string("s") + std::to_string(seed) + ":" + num(act, 3) + "-" +
                num(vanilla, 3);
  }
  return {ok, measured, "actguide - vanilla >= 0.5 on every seed", ""};
}

CheckOutcome telescoping() {
  Rng rng(3);
  double worst = 0.0;
  int pairs = 0;
  for (int i = 0; i < 100; ++i) {
    const EnvSpec env = random_env(rng, 12, 8, 0.2);
    const PolicyParams p = random_policy(rng, env.horizon, env.alphabet, 2.0);
    const auto prof = mass_profile(env, step_distributions(p));
    ++pairs;
    for (int u = 0; u <= env.horizon; ++u) {
      if (prof.mass[static_cast<std::size_t>(u)] == 0.0) break;
      double prod = prof.mass[static_cast<std::size_t>(u)];
      for (int v = u + 1; v <= env.horizon; ++v) {
        const auto& kappa = prof.retention[static_cast<std::size_t>(v - 1)];
        if (!kappa) break;
        prod *= *kappa;
        const double mv = prof.mass[static_cast<std::size_t>(v)];
        if (mv > 0.0) worst = std::max(worst, std::abs(prod - mv) / mv);
      }
    }
  }
  return {worst <= 1e-12, "max rel err " + num(worst, 3) + " over " + std::to_string(pairs) + " pairs", "<= 1e-12", ""};
}

CheckOutcome mass_bound() {
  Rng rng(4);
  constexpr int n = 10000;
  double worst_z = -1e300;
  for (int i = 0; i < 50; ++i) {
    const EnvSpec env = random_env(rng, 12, 8, 0.1);
    const PolicyParams p = random_policy(rng, env.horizon, env.alphabet, 2.0);
    const auto group = sample_group(env, p, std::nullopt, n, rng(), i);
    double hits = 0.0;
    for (const auto& tr : group.trajectories) hits += tr.reward;
    const double mc = hits / n;
    const auto prof = mass_profile(env, step_distributions(p));
    for (double m : prof.mass) {
      const double sigma = std::sqrt(m * (1.0 - m) / n);
      if (sigma == 0.0) {
        if (mc > m) worst_z = 1e300;
        continue;
      }
      worst_z = std::max(worst_z, (mc - m) / sigma);
    }
  }
  return {worst_z <= 3.0, "max (MC - M_t)/sigma = " + num(worst_z, 3), "MC <= M_t + 3 sigma for all t", ""};
}

CheckOutcome risk_monotone() {
  const Task task = hard_task();
  const PolicyParams p = uniform_policy(12, 8);
  std::vector<int> levels(13);
  std::iota(levels.begin(), levels.end(), 0);
  const auto reports = risk_curve(task.env, p, task.reference, levels, 1000, 5);
  std::vector<double> ks, rs;
  double worst = 0.0;
  for (const auto& r : reports) {
    ks.push_back(r.k);
    rs.push_back(r.risk);
    const double err = std::abs(r.risk - (r.variance_sum + r.covariance_sum));
    worst = std::max(worst, r.risk != 0.0 ? err / std::abs(r.risk) : err);
  }
  const double rho = spearman(ks, rs);
  return {rho > 0.9 && worst <= 1e-9, "spearman=" + num(rho) + " decomposition rel err=" + num(worst, 3),
          "spearman > 0.9, decomposition <= 1e-9", ""};
}

CheckOutcome binary_search_equivalence() {
  Rng rng(6);
  int agree = 0, within = 0;
  for (int i = 0; i < 200; ++i) {
    const int K = 1 + uniform_index(rng, 64);
    const int threshold = 1 + uniform_index(rng, K + 1);  // K + 1: no level succeeds
    const auto oracle = [&](int k) { return k >= threshold; };
    std::optional<int> linear;
    for (int k = 1; k <= K; ++k)
      if (oracle(k)) {
        linear = k;
        break;
      }
    const int budget = default_search_budget(K);
    const auto res = find_min_level(oracle, K, budget);
    if (res.k_star == linear) ++agree;
    if (res.budget_used <= budget) ++within;
  }
  return {agree == 200 && within == 200,
          std::to_string(agree) + "/200 match, " + std::to_string(within) + "/200 within budget",
          "200/200 and budget <= ceil(log2 K)+2", ""};
}

CheckOutcome minimal_feasible_level() {
  Rng rng(7);
  int good = 0;
  for (int i = 0; i < 500; ++i) {
    const int K = 1 + uniform_index(rng, 64);
    std::vector<double> q(static_cast<std::size_t>(K + 1)), r(static_cast<std::size_t>(K + 1));
    for (auto& x : q) x = uniform01(rng);
    for (auto& x : r) x = uniform01(rng);
    std::sort(q.begin(), q.end());
    std::sort(r.begin(), r.end());
    const double rho = uniform01(rng);
    const auto chosen = select_risk_constrained(q, r, rho);
    std::optional<double> best;
    for (std::size_t k = 0; k < q.size(); ++k)
      if (q[k] >= rho) best = best ? std::min(*best, r[k]) : r[k];
    const bool ok = chosen ? (best && r[static_cast<std::size_t>(*chosen)] == *best &&
                              q[static_cast<std::size_t>(*chosen)] >= rho)
                           : !best;
    if (ok) ++good;
  }
  return {good == 500, std::to_string(good) + "/500", "500/500", ""};
}

CheckOutcome empirical_selection() {
  constexpr int K = 8;
  constexpr int N = 8;
  constexpr double margin = 0.1, xi = 0.05, delta = 0.5;
  const Task task = hard_task();
  const PolicyParams p = uniform_policy(12, 8);
  const int m = hoeffding_budget(margin, K, xi);

  std::vector<double> q_true;
  for (int k = 0; k <= K; ++k) q_true.push_back(estimate_q(task.env, p, level(task.reference, k), N, delta, 1, 0).q_exact);
  // Place rho exactly Delta below the first level that clears it.
  const double rho = q_true.back() - margin;
  std::optional<int> k_true;
  double gap = 1.0;
  for (int k = 0; k <= K; ++k) {
    gap = std::min(gap, std::abs(q_true[static_cast<std::size_t>(k)] - rho));
    if (!k_true && q_true[static_cast<std::size_t>(k)] >= rho) k_true = k;
  }

  constexpr int experiments = 500;
  int recovered = 0;
  const std::vector<double> zeros(K + 1, 0.0);
  for (int e = 0; e < experiments; ++e) {
    std::vector<double> q_hat;
    for (int k = 0; k <= K; ++k)
      q_hat.push_back(estimate_q(task.env, p, level(task.reference, k), N, delta, m,
                                 derive_stream(8, {static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(k)}))
                          .q_hat);
    if (select_risk_constrained(q_hat, zeros, rho) == k_true) ++recovered;
  }
  const double rate = static_cast<double>(recovered) / experiments;
  return {m == 295 && gap >= margin - 1e-12 && rate >= 0.93,
          "recovered " + num(rate, 4) + " (m=" + std::to_string(m) + ", k*=" + std::to_string(k_true.value_or(-1)) +
              ", rho=" + num(rho, 3) + ")",
          "m = 295, rate >= 0.95 nominal, reject below 0.93", ""};
}

CheckOutcome ratio_semantics() {
  Rng rng(10);
  double worst_unguided = 0.0, worst_guided = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto in = make_instance(rng, 0.0);
    for (const auto& g : in.groups)
      for (const auto& tr : g.trajectories)
        for (const auto& st : tr.steps) {
          const double r = mixed_ratio(in.old, in.old, st, tr.source, RatioMode::mixed);
          if (tr.source == Source::unguided || !st.recommended) {
            worst_unguided = std::max(worst_unguided, std::abs(r - 1.0));
            continue;
          }
          // pi(a) / pi(a | g) = (1 + (e^gamma - 1) pi(rec)) * exp(-gamma [a == rec])
          const auto row = in.old.logits.row(st.state.t);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (double v : row) z += std::exp(v - mx);
          const double p_rec = std::exp(row[static_cast<std::size_t>(*st.recommended)] - mx) / z;
          const double gamma = in.old.guidance_strength;
          const double expected =
              (1.0 + std::expm1(gamma) * p_rec) * (st.action == *st.recommended ? std::exp(-gamma) : 1.0);
          worst_guided = std::max(worst_guided, std::abs(r - expected) / expected);
          const double naive = mixed_ratio(in.old, in.old, st, tr.source, RatioMode::naive);
          worst_unguided = std::max(worst_unguided, std::abs(naive - 1.0));
        }
  }
  return {worst_unguided <= 1e-12 && worst_guided <= 1e-12,
          "unguided |r-1|=" + num(worst_unguided, 3) + " guided rel err=" + num(worst_guided, 3), "<= 1e-12", ""};
}

CheckOutcome ablation_ordering() {
  const EnvShape shape;
  const DifficultyMix mix{{"easy", 0.34}, {"medium", 0.33}, {"hard", 0.33}};
  const std::vector<int> fixed_levels{2, 4, 6, 8, 10, 12};
  std::vector<double> act, naive;
  std::vector<std::vector<double>> fixed(fixed_levels.size());
  for (auto seed : kSeeds) {
    const auto tasks = generate_taskset(shape, mix, 6, seed).tasks;
    TrainConfig cfg;
    cfg.mode = TrainMode::actguide;
    act.push_back(final_success(tasks, cfg, seed));
    cfg.mode = TrainMode::fixed_k;
    for (std::size_t i = 0; i < fixed_levels.size(); ++i) {
      cfg.fixed_k = fixed_levels[i];
      fixed[i].push_back(final_success(tasks, cfg, seed));
    }
    cfg.mode = TrainMode::always_guided;
    cfg.ratio_mode = RatioMode::naive;
    naive.push_back(final_success(tasks, cfg, seed));
  }
  // Best single k by mean over seeds.
  std::size_t best = 0;
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  for (std::size_t i = 1; i < fixed.size(); ++i)
    if (mean(fixed[i]) > mean(fixed[best])) best = i;

  int both = 0, first = 0, second = 0;
  std::string measured = "k=" + std::to_string(fixed_levels[best]);
  for (std::size_t s = 0; s < kSeeds.size(); ++s) {
    const bool a = act[s] >= fixed[best][s];
    const bool b = fixed[best][s] >= naive[s];
    first += a;
    second += b;
    both += a && b;
    measured += " s" + std::to_string(kSeeds[s]) + ":" + num(act[s], 3) + "/" + num(fixed[best][s], 3) + "/" +
                num(naive[s], 3);
  }
  std::string note;
  if (both < 2)
    note = "actguide >= fixed-k held on " + std::to_string(first) + "/3 seeds, fixed-k >= always-guided/naive on " +
           std::to_string(second) + "/3";
  return {both >= 2, measured, "actguide >= fixed-k(best) >= always-guided/naive on >= 2 of 3 seeds", note};
}

CheckOutcome noise_robustness() {
  const EnvShape shape;
  bool ok = true;
  std::string measured;
  for (auto seed : kSeeds) {
    const TaskSet clean = generate_taskset(shape, {{"medium", 1.0}}, 1, seed);
    const TaskSet noisy = with_noise(clean, 0.1, seed);
    TrainConfig cfg;
    const double a = final_success(clean.tasks, cfg, seed);
    const double b = final_success(noisy.tasks, cfg, seed);
    ok = ok && a - b <= 0.1;
    measured += (measured.empty() ? "" : " ") + std::string("s") + std::to_string(seed) + ":" + num(a, 3) + "->" + num(b, 3);
  }
  return {ok, measured, "clean - noisy(10%) <= 0.1 on every seed", ""};
}

// Properties

CheckOutcome serial_parallel_parity() {
  const Task task = hard_task();
  Rng rng(11);
  const PolicyParams p = random_policy(rng, 12, 8, 1.0);
  bool same = true;
  for (int k : {0, 6, 12}) {
    const std::optional<GuidanceLevel> g = k ? std::optional(level(task.reference, k)) : std::nullopt;
    const auto a = sample_group(task.env, p, g, 512, 77, 3);
    const auto b = sample_group_serial(task.env, p, g, 512, 77, 3);
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
      const auto& x = a.trajectories[i];
      const auto& y = b.trajectories[i];
      same = same && x.reward == y.reward && x.steps.size() == y.steps.size();
      for (std::size_t j = 0; same && j < x.steps.size(); ++j)
        same = x.steps[j].action == y.steps[j].action && x.steps[j].behavior_log_prob == y.steps[j].behavior_log_prob;
    }
  }
  return {same, same ? "identical" : "differs", "bit-identical groups", ""};
}

CheckOutcome checkpoint_roundtrip() {
  Rng rng(12);
  int exact = 0;
  for (int i = 0; i < 50; ++i) {
    PolicyParams p = random_policy(rng, 1 + uniform_index(rng, 12), 2 + uniform_index(rng, 7), 50.0, 10.0 * uniform01(rng));
    const auto text = checkpoint_to_json(p, "abc", i).dump();
    const auto back = checkpoint_from_json(nlohmann::json::parse(text));
    if (back.params == p && back.step == i && back.env_hash == "abc") ++exact;
  }
  return {exact == 50, std::to_string(exact) + "/50", "50/50 bit-exact", ""};
}

CheckOutcome config_echo_roundtrip() {
  ExperimentConfig c;
  c.train.learning_rate = 0.1 + 1.0 / 3.0;
  c.noise_ratios = {0.0, 1.0 / 7.0};
  c.mix = {{"easy", 0.25}, {"hard", 0.75}};
  c.seed = 0xfedcba9876543210ULL;
  const bool ok = parse_config(echo_config(c)) == c && parse_config(echo_config({})) == ExperimentConfig{};
  return {ok, ok ? "equal" : "differs", "parse(echo(c)) == c", ""};
}

CheckOutcome training_reproducible() {
  const auto tasks = generate_taskset({}, {{"easy", 0.5}, {"hard", 0.5}}, 2, 5).tasks;
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.minibatch_size = 2;
  auto run = [&] {
    std::string out;
    TrainHooks hooks;
    hooks.on_step = [&](const StepMetrics& m) {
      out += std::to_string(m.step) + format_double(m.exact_success) + format_double(m.grad_norm) +
             format_double(m.kl) + "\n";
    };
    train(tasks, uniform_policy(12, 8), cfg, 5, hooks);
    return out;
  };
  const bool same = run() == run();
  return {same, same ? "identical" : "differs", "identical metric streams", ""};
}

}  // namespace

MixedGradFn analytic_mixed_grad() {
  return [](const PolicyParams& p, std::span<const RolloutGroup> g, const PolicyParams& old, const PolicyParams& ref,
            const TrainConfig& c) { return mixed_objective_grad(p, g, old, ref, c); };
}

OpsdGradFn analytic_opsd_grad() {
  return [](const PolicyParams& p, const PolicyParams& old, std::span<const RolloutGroup> g, const GuidanceContext& ctx) {
    return opsd_grad(p, old, g, ctx);
  };
}

CheckOutcome check_gradient_fidelity(const MixedGradFn& mixed, const OpsdGradFn& opsd, int instances,
                                     std::uint64_t seed) {
  Rng rng(seed);
  constexpr double h = 1e-6;
  double worst_mixed = 0.0, worst_opsd = 0.0;
  for (int i = 0; i < instances; ++i) {
    const auto in = make_instance(rng, 0.3);
    const auto analytic = mixed(in.params, in.groups, in.old, in.ref, in.config).grad.data();
    const auto fd = central_difference(
        in.params, [&](const PolicyParams& p) { return mixed_objective_value(p, in.groups, in.old, in.ref, in.config); }, h);
    worst_mixed = std::max(worst_mixed, relative_error(analytic, fd));

    const std::span<const RolloutGroup> unguided(in.groups.data(), 1);
    const auto ctx = level(in.plan, in.k).context;
    const auto od = opsd(in.params, in.old, unguided, ctx).data();
    const auto ofd =
        central_difference(in.params, [&](const PolicyParams& p) { return opsd_loss(p, in.old, unguided, ctx); }, h);
    worst_opsd = std::max(worst_opsd, relative_error(od, ofd));
  }
  return {worst_mixed < 1e-5 && worst_opsd < 1e-5, "mixed " + num(worst_mixed, 3) + ", opsd " + num(worst_opsd, 3),
          "max relative error < 1e-5", ""};
}

std::vector<Check> acceptance_checks() {
  return {
      {"1", "barrier stall", barrier_stall},
      {"2", "internalization", internalization},
      {"3", "telescoping identity", telescoping},
      {"4", "mass upper bound", mass_bound},
      {"5", "risk monotonicity", risk_monotone},
      {"6", "binary search equivalence", binary_search_equivalence},
      {"7", "minimal feasible level", minimal_feasible_level},
      {"8", "empirical selection rule", empirical_selection},
      {"9", "gradient fidelity", [] { return check_gradient_fidelity(analytic_mixed_grad(), analytic_opsd_grad()); }},
      {"10", "ratio semantics", ratio_semantics},
      {"11", "ablation ordering", ablation_ordering},
      {"12", "noise robustness", noise_robustness},
  };
}

std::vector<Check> property_checks() {
  return {
      {"p:parity", "serial/parallel sampling parity", serial_parallel_parity},
      {"p:checkpoint", "checkpoint round trip", checkpoint_roundtrip},
      {"p:config", "config echo round trip", config_echo_roundtrip},
      {"p:repro", "training reproducibility", training_reproducible},
  };
}

std::vector<CheckResult> run_checks(const std::vector<Check>& checks, std::ostream* live) {
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    CheckResult r{c.id, c.name, {}, 0.0, {}};
    const auto start = std::chrono::steady_clock::now();
    try {
      r.outcome = c.run();
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (live) *live << format_result(r) << std::endl;
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed() ? "PASS" : "FAIL") << "  " << std::left << std::setw(12) << r.id << " " << std::setw(34) << r.name << " ";
  if (!r.error.empty()) {
    os << "error: " << r.error;
  } else {
    os << r.outcome.measured << "  [tol: " << r.outcome.tolerance << "]";
    if (!r.outcome.note.empty()) os << "  (" << r.outcome.note << ")";
  }
  os << "  " << std::fixed << std::setprecision(2) << r.seconds << "s";
  return os.str();
}

void print_report(std::ostream& os, const std::vector<CheckResult>& results) {
  int passed = 0;
  double total = 0.0;
  for (const auto& r : results) {
    os << format_result(r) << '\n';
    passed += r.passed();
    total += r.seconds;
  }
  os << passed << "/" << results.size() << " checks passed in " << std::fixed << std::setprecision(1) << total << "s\n";
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed(); });
}

}  // namespace guidelab::harness
