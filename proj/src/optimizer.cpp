#include "guidelab/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace guidelab {

std::string to_string(AdvantageMode m) {
  return m == AdvantageMode::mean_centered ? "mean_centered" : "std_normalized";
}
std::string to_string(AdvantagePooling p) { return p == AdvantagePooling::joint ? "joint" : "per_source"; }
std::string to_string(RatioMode m) { return m == RatioMode::mixed ? "mixed" : "naive"; }
std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::actguide: return "actguide";
    case TrainMode::fixed_k: return "fixed-k";
    case TrainMode::always_guided: return "always-guided";
    case TrainMode::opsd: return "opsd";
  }
  return "?";
}

AdvantageMode parse_advantage_mode(const std::string& s) {
  if (s == "mean_centered") return AdvantageMode::mean_centered;
  if (s == "std_normalized") return AdvantageMode::std_normalized;
  throw std::invalid_argument("unknown advantage mode: " + s);
}
AdvantagePooling parse_advantage_pooling(const std::string& s) {
  if (s == "joint") return AdvantagePooling::joint;
  if (s == "per_source") return AdvantagePooling::per_source;
  throw std::invalid_argument("unknown advantage pooling: " + s);
}
RatioMode parse_ratio_mode(const std::string& s) {
  if (s == "mixed") return RatioMode::mixed;
  if (s == "naive") return RatioMode::naive;
  throw std::invalid_argument("unknown ratio mode: " + s);
}
TrainMode parse_train_mode(const std::string& s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "actguide") return TrainMode::actguide;
  if (s == "fixed-k" || s == "fixed_k") return TrainMode::fixed_k;
  if (s == "always-guided" || s == "always_guided") return TrainMode::always_guided;
  if (s == "opsd") return TrainMode::opsd;
  throw std::invalid_argument("unknown train mode: " + s);
}

void TrainConfig::validate() const {
  if (minibatch_size < 1) throw std::invalid_argument("TrainConfig: minibatch_size must be >= 1");
  if (group_size < 2) throw std::invalid_argument("TrainConfig: group_size must be >= 2");
  if (!(clip > 0.0)) throw std::invalid_argument("TrainConfig: clip must be > 0");
  if (!(kl_coeff >= 0.0)) throw std::invalid_argument("TrainConfig: kl_coeff must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (!(delta > 0.0 && delta <= 1.0)) throw std::invalid_argument("TrainConfig: delta must be in (0, 1]");
  if (budget < 0 || max_level < 0) throw std::invalid_argument("TrainConfig: budget and K must be >= 0");
  if (mode == TrainMode::fixed_k && fixed_k < 1) throw std::invalid_argument("TrainConfig: fixed-k needs k >= 1");
  if (!(opsd_coeff >= 0.0)) throw std::invalid_argument("TrainConfig: opsd_coeff must be >= 0");
}

std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode) {
  if (rewards.empty()) throw std::invalid_argument("compute_advantages: empty group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (mode == AdvantageMode::std_normalized) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::sqrt(var / n);
    for (auto& a : adv) a = sd > 0.0 ? a / sd : 0.0;
  }
  return adv;
}

void assign_advantages(std::span<RolloutGroup> task_groups, AdvantageMode mode, AdvantagePooling pooling) {
  if (pooling == AdvantagePooling::per_source) {
    for (auto& g : task_groups) g.advantages = compute_advantages(g.rewards(), mode);
    return;
  }
  std::vector<double> rewards;
  for (const auto& g : task_groups) {
    const auto r = g.rewards();
    rewards.insert(rewards.end(), r.begin(), r.end());
  }
  const auto adv = compute_advantages(rewards, mode);
  std::size_t offset = 0;
  for (auto& g : task_groups) {
    g.advantages.assign(adv.begin() + static_cast<std::ptrdiff_t>(offset),
                        adv.begin() + static_cast<std::ptrdiff_t>(offset + g.trajectories.size()));
    offset += g.trajectories.size();
  }
}

double mixed_ratio(const PolicyParams& params, const PolicyParams& params_old, const StepRecord& step, Source source,
                   RatioMode mode) {
  const int t = step.state.t;
  const double numerator = log_prob(params, t, step.action, std::nullopt);
  const bool guided_denominator = source == Source::guided && mode == RatioMode::mixed;
  const double denominator =
      log_prob(params_old, t, step.action, guided_denominator ? step.recommended : std::nullopt);
  return std::exp(numerator - denominator);
}

ObjectiveScale batch_scale(std::span<const RolloutGroup> groups) {
  ObjectiveScale s;
  for (const auto& g : groups) {
    s.trajectory_count += static_cast<double>(g.trajectories.size());
    for (const auto& tr : g.trajectories) s.token_count += static_cast<double>(tr.steps.size());
  }
  return s;
}

namespace {

void check_shapes(const PolicyParams& a, const PolicyParams& b, const char* what) {
  if (!a.logits.same_shape(b.logits)) throw std::invalid_argument(std::string(what) + ": parameter shape mismatch");
}

ObjectiveScale resolve(ObjectiveScale scale, std::span<const RolloutGroup> groups) {
  const auto own = batch_scale(groups);
  if (scale.token_count <= 0.0) scale.token_count = own.token_count;
  if (scale.trajectory_count <= 0.0) scale.trajectory_count = own.trajectory_count;
  return scale;
}

// Everything both the value and the gradient need, evaluated once.
struct Evaluation {
  double surrogate = 0.0;
  double kl_total = 0.0;
  long tokens = 0;
  long clipped = 0;
  bool trainable = false;
  Table grad;
};

Evaluation evaluate(const PolicyParams& params, std::span<const RolloutGroup> groups, const PolicyParams& params_old,
                    const PolicyParams& params_ref, const TrainConfig& config, ObjectiveScale scale,
                    bool want_grad) {
  check_shapes(params, params_old, "mixed objective");
  check_shapes(params, params_ref, "mixed objective");
  scale = resolve(scale, groups);

  const int T = params.horizon();
  const int A = params.alphabet();
  const Table probs = step_distributions(params);
  const Table log_probs = step_log_distributions(params);
  const Table old_log_probs = step_log_distributions(params_old);
  const Table ref_log_probs = step_log_distributions(params_ref);

  std::vector<double> step_kl(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    double kl = 0.0;
    for (int a = 0; a < A; ++a) kl += probs(t, a) * (log_probs(t, a) - ref_log_probs(t, a));
    step_kl[static_cast<std::size_t>(t)] = kl;
  }

  Evaluation ev;
  if (want_grad) ev.grad = Table(T, A);
  std::vector<double> live_visits(static_cast<std::size_t>(T), 0.0);
  std::vector<double> row(static_cast<std::size_t>(A));

  for (const auto& g : groups) {
    if (g.advantages.size() != g.trajectories.size())
      throw std::invalid_argument("mixed objective: advantages not assigned");
    for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
      const auto& tr = g.trajectories[i];
      const double adv = g.advantages[i];
      if (adv != 0.0) ev.trainable = true;
      for (const auto& st : tr.steps) {
        const int t = st.state.t;
        double denom;
        if (tr.source == Source::guided && config.ratio_mode == RatioMode::mixed && st.recommended) {
          const auto z = logits(params_old, t, st.recommended);
          log_softmax(z, row);
          denom = row[static_cast<std::size_t>(st.action)];
        } else {
          denom = old_log_probs(t, st.action);
        }
        const double r = std::exp(log_probs(t, st.action) - denom);
        const double clipped_r = std::clamp(r, 1.0 - config.clip, 1.0 + config.clip);
        const double unclipped_term = r * adv;
        const double clipped_term = clipped_r * adv;
        ++ev.tokens;
        if (clipped_term < unclipped_term) {
          ++ev.clipped;
          ev.surrogate += clipped_term;
        } else {
          ev.surrogate += unclipped_term;
          if (want_grad && adv != 0.0) {
            // d(r * adv)/d theta[t] = adv * r * (e_a - pi_theta(.|t))
            const double w = adv * r / scale.token_count;
            for (int a = 0; a < A; ++a) ev.grad(t, a) -= w * probs(t, a);
            ev.grad(t, st.action) += w;
          }
        }
        if (st.state.alive) {
          live_visits[static_cast<std::size_t>(t)] += 1.0;
          ev.kl_total += step_kl[static_cast<std::size_t>(t)];
        }
      }
    }
  }
  ev.surrogate /= scale.token_count;

  if (want_grad && config.kl_coeff > 0.0) {
    for (int t = 0; t < T; ++t) {
      const double visits = live_visits[static_cast<std::size_t>(t)];
      if (visits == 0.0) continue;
      const double w = config.kl_coeff * visits / scale.trajectory_count;
      const double kl = step_kl[static_cast<std::size_t>(t)];
      for (int a = 0; a < A; ++a)
        ev.grad(t, a) -= w * probs(t, a) * (log_probs(t, a) - ref_log_probs(t, a) - kl);
    }
  }
  ev.kl_total /= scale.trajectory_count;
  return ev;
}

}  // namespace

double mixed_objective_value(const PolicyParams& params, std::span<const RolloutGroup> groups,
                             const PolicyParams& params_old, const PolicyParams& params_ref,
                             const TrainConfig& config, ObjectiveScale scale) {
  const auto ev = evaluate(params, groups, params_old, params_ref, config, scale, false);
  return ev.surrogate - config.kl_coeff * ev.kl_total;
}

ObjectiveGradient mixed_objective_grad(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                       const PolicyParams& params_old, const PolicyParams& params_ref,
                                       const TrainConfig& config, ObjectiveScale scale) {
  auto ev = evaluate(params, groups, params_old, params_ref, config, scale, true);
  ObjectiveGradient out;
  out.report.surrogate = ev.surrogate;
  out.report.kl = ev.kl_total;
  out.report.grad_norm = l2_norm(ev.grad.data());
  out.report.trainable = ev.trainable;
  out.report.tokens = ev.tokens;
  out.report.clipped_tokens = ev.clipped;
  out.report.clip_fraction = ev.tokens > 0 ? static_cast<double>(ev.clipped) / static_cast<double>(ev.tokens) : 0.0;
  out.grad = std::move(ev.grad);
  return out;
}

double opsd_loss(const PolicyParams& params, const PolicyParams& params_old, std::span<const RolloutGroup> groups,
                 const GuidanceContext& guidance) {
  check_shapes(params, params_old, "opsd");
  const Table student = step_distributions(params);
  const Table teacher = step_distributions(params_old, guidance);
  double total = 0.0;
  long count = 0;
  for (const auto& g : groups) {
    for (const auto& tr : g.trajectories) {
      double per = 0.0;
      for (const auto& st : tr.steps) per += categorical_kl(teacher.row(st.state.t), student.row(st.state.t));
      total += per / static_cast<double>(tr.steps.size());
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("opsd_loss: no trajectories");
  return total / static_cast<double>(count);
}

Table opsd_grad(const PolicyParams& params, const PolicyParams& params_old, std::span<const RolloutGroup> groups,
                const GuidanceContext& guidance) {
  check_shapes(params, params_old, "opsd");
  const Table student = step_distributions(params);
  const Table teacher = step_distributions(params_old, guidance);
  Table grad(params.horizon(), params.alphabet());
  long count = 0;
  for (const auto& g : groups) {
    for (const auto& tr : g.trajectories) {
      const double w = 1.0 / static_cast<double>(tr.steps.size());
      for (const auto& st : tr.steps) {
        const int t = st.state.t;
        // d KL(q || softmax(z)) / dz = softmax(z) - q
        for (int a = 0; a < params.alphabet(); ++a) grad(t, a) += w * (student(t, a) - teacher(t, a));
      }
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("opsd_grad: no trajectories");
  for (auto& x : grad.data()) x /= static_cast<double>(count);
  return grad;
}

double mean_exact_success(std::span<const Task> tasks, std::span<const PolicyParams> params) {
  if (tasks.size() != params.size() || tasks.empty())
    throw std::invalid_argument("mean_exact_success: need one policy per task");
  double s = 0.0;
  for (std::size_t b = 0; b < tasks.size(); ++b) s += exact_success(tasks[b].env, step_distributions(params[b]));
  return s / static_cast<double>(tasks.size());
}

namespace {

enum StreamTag : std::uint64_t { kUnguided = 0, kGuided = 1, kReverify = 2, kBatch = 3, kProbe = 100 };

std::vector<std::size_t> pick_minibatch(std::size_t task_count, int m, std::uint64_t seed, int step) {
  std::vector<std::size_t> idx(task_count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (static_cast<std::size_t>(m) >= task_count) return idx;
  Rng rng(derive_stream(seed, {static_cast<std::uint64_t>(step), kBatch}));
  // Partial Fisher-Yates with the portable index draw.
  for (int i = 0; i < m; ++i) {
    const int j = i + uniform_index(rng, static_cast<int>(task_count) - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string describe_non_finite(int step, const Task& task, const UpdateReport& rep) {
  std::ostringstream os;
  os << "non-finite gradient at step " << step << " task " << task.id << " (surrogate=" << rep.surrogate
     << ", kl=" << rep.kl << ", clipped " << rep.clipped_tokens << "/" << rep.tokens << ")";
  return os.str();
}

}  // namespace

TrainResult train(std::span<const Task> tasks, const PolicyParams& init, const TrainConfig& config,
                  std::uint64_t seed, const TrainHooks& hooks) {
  config.validate();
  init.validate();
  if (tasks.empty()) throw std::invalid_argument("train: empty task set");
  for (const auto& task : tasks) {
    task.env.validate();
    if (task.env.horizon != init.horizon() || task.env.alphabet != init.alphabet())
      throw std::invalid_argument("train: init params do not match task env shape");
  }

  TrainResult result;
  result.params.assign(tasks.size(), init);
  const std::vector<PolicyParams> reference(tasks.size(), init);
  const int n = config.group_size;

  for (int step = 1; step <= config.steps; ++step) {
    const std::vector<PolicyParams> old = result.params;
    const auto batch = pick_minibatch(tasks.size(), config.minibatch_size, seed, step);
    const auto step_seed = [&](std::uint64_t tag) { return derive_stream(seed, {static_cast<std::uint64_t>(step), tag}); };

    std::vector<std::vector<RolloutGroup>> groups(batch.size());
    std::vector<std::optional<int>> used_level(batch.size());
    int trainable_groups = 0;

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const auto b = batch[bi];
      const Task& task = tasks[b];
      const PolicyParams& behaviour = old[b];
      const int plan_len = task.reference.length();
      const int max_k = config.max_level > 0 ? std::min(config.max_level, plan_len) : plan_len;

      auto& task_groups = groups[bi];
      task_groups.push_back(sample_group(task.env, behaviour, std::nullopt, n, step_seed(kUnguided), task.id));
      const auto rewards = task_groups.front().rewards();
      const bool fallback = fallback_trigger(rewards, config.delta);

      std::optional<int> k;
      switch (config.mode) {
        case TrainMode::vanilla:
        case TrainMode::opsd:
          break;
        case TrainMode::fixed_k:
          if (fallback) k = std::min(config.fixed_k, plan_len);
          break;
        case TrainMode::always_guided:
          k = max_k;
          break;
        case TrainMode::actguide:
          if (fallback && max_k >= 1) {
            const int budget = config.budget > 0 ? config.budget : default_search_budget(max_k);
            std::map<int, RolloutGroup> probes;
            auto oracle = [&](int lvl) {
              auto probe = sample_group(task.env, behaviour, level(task.reference, lvl), n,
                                        step_seed(kProbe + static_cast<std::uint64_t>(lvl)), task.id);
              const auto r = probe.rewards();
              const bool ok = !fallback_trigger(r, config.delta);
              if (ok && config.reuse_probe) probes.emplace(lvl, std::move(probe));
              return ok;
            };
            SelectionRecord rec{step, task.id, find_min_level(oracle, max_k, budget), std::nullopt};
            k = rec.result.k_star;
            if (k && config.reverify) {
              const auto again = sample_group(task.env, behaviour, level(task.reference, *k), n,
                                              step_seed(kReverify), task.id);
              const auto r = again.rewards();
              rec.reverify_agreed = !fallback_trigger(r, config.delta);
            }
            if (hooks.on_selection) hooks.on_selection(rec);
            if (k && config.reuse_probe) {
              task_groups.push_back(std::move(probes.at(*k)));
              used_level[bi] = k;
              k.reset();
            }
          }
          break;
      }
      if (k && *k >= 1) {
        task_groups.push_back(
            sample_group(task.env, behaviour, level(task.reference, *k), n, step_seed(kGuided), task.id));
        used_level[bi] = k;
      }
      assign_advantages(task_groups, config.advantage_mode, config.pooling);
      if (hooks.on_group)
        for (const auto& g : task_groups) hooks.on_group(step, g);

      std::vector<double> merged;
      for (const auto& g : task_groups) {
        const auto r = g.rewards();
        merged.insert(merged.end(), r.begin(), r.end());
      }
      const auto [lo, hi] = std::minmax_element(merged.begin(), merged.end());
      if (*lo != *hi) ++trainable_groups;
    }

    std::vector<RolloutGroup> all;
    for (const auto& tg : groups) all.insert(all.end(), tg.begin(), tg.end());
    const auto scale = batch_scale(all);

    StepMetrics m;
    m.step = step;
    m.mode = to_string(config.mode);
    double sq_norm = 0.0;
    long tokens = 0;
    long clipped = 0;
    double kl_weighted = 0.0;
    double reward_sum = 0.0;

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const auto b = batch[bi];
      const Task& task = tasks[b];
      auto& params = result.params[b];
      auto og = mixed_objective_grad(params, groups[bi], old[b], reference[b], config, scale);
      if (!all_finite(og.grad.data())) throw NumericError(describe_non_finite(step, task, og.report));

      for (std::size_t i = 0; i < og.grad.data().size(); ++i)
        params.logits.data()[i] += config.learning_rate * og.grad.data()[i];
      sq_norm += og.report.grad_norm * og.report.grad_norm;

      if (config.mode == TrainMode::opsd && config.opsd_coeff > 0.0) {
        const int max_k = config.max_level > 0 ? std::min(config.max_level, task.reference.length())
                                               : task.reference.length();
        const auto teacher = level(task.reference, max_k);
        const std::span<const RolloutGroup> unguided(groups[bi].data(), 1);
        const Table g = opsd_grad(params, old[b], unguided, teacher.context);
        if (!all_finite(g.data())) throw NumericError(describe_non_finite(step, task, og.report));
        for (std::size_t i = 0; i < g.data().size(); ++i)
          params.logits.data()[i] -= config.learning_rate * config.opsd_coeff * g.data()[i];
      }

      tokens += og.report.tokens;
      clipped += og.report.clipped_tokens;
      for (const auto& g : groups[bi])
        for (const auto& tr : g.trajectories) reward_sum += tr.reward;
      // og.report.kl is normalised by the whole batch already.
      kl_weighted += og.report.kl;
    }

    double k_sum = 0.0;
    int k_count = 0;
    for (const auto& k : used_level)
      if (k) {
        k_sum += *k;
        ++k_count;
      }

    m.exact_success = mean_exact_success(tasks, result.params);
    m.trainable_frac = static_cast<double>(trainable_groups) / static_cast<double>(batch.size());
    m.mean_k_star = k_count > 0 ? k_sum / k_count : std::numeric_limits<double>::quiet_NaN();
    m.mean_reward = reward_sum / scale.trajectory_count;
    m.grad_norm = std::sqrt(sq_norm);
    m.clip_frac = tokens > 0 ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
    m.kl = kl_weighted;
    result.log.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if (hooks.on_checkpoint && hooks.checkpoint_interval > 0 &&
        (step % hooks.checkpoint_interval == 0 || step == config.steps))
      hooks.on_checkpoint(step, result.params);
  }
  return result;
}

}  // namespace guidelab
