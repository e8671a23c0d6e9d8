#include "guidelab/harness/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <numeric>

#include "guidelab/analysis.hpp"

namespace guidelab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

OutputFile::OutputFile(const fs::path& path) : path_(path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::out | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
}

void OutputFile::line(const std::string& text) {
  std::lock_guard lock(mu_);
  out_ << text << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
}

std::string hash_header(const std::string& config_hash, const std::string& env_hash) {
  return "# config_hash=" + config_hash + " env_hash=" + env_hash;
}

std::string metrics_row(const StepMetrics& m) {
  std::string row = std::to_string(m.step) + "," + m.mode;
  for (double v : {m.exact_success, m.trainable_frac, m.mean_k_star, m.mean_reward, m.grad_norm, m.clip_frac, m.kl})
    row += "," + format_double(v);
  return row;
}

fs::path resolve_output(const ExperimentConfig& config, const std::string& command,
                        const std::optional<std::string>& cli_out) {
  if (cli_out) return *cli_out;
  if (!config.output.empty()) return config.output;
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "runs") / command;
}

TaskSet build_taskset(const ExperimentConfig& config) {
  TaskSet set = generate_taskset(config.env, config.mix, config.task_count, config.seed);
  if (config.noise_ratio > 0.0) set = with_noise(set, config.noise_ratio, config.seed);
  return set;
}

Task analysis_task(const ExperimentConfig& config) {
  for (const auto& t : build_taskset(config).tasks)
    if (t.difficulty == config.analysis.difficulty) return t;
  throw ConfigError("no generated task has difficulty '" + config.analysis.difficulty + "'");
}

namespace {

void say(const RunContext& ctx, const std::string& text) {
  if (!ctx.quiet) std::cout << text << std::endl;
}

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (c == ':' || c == '/') c = '_';
  return s;
}

PolicyParams initial_params(const ExperimentConfig& c) {
  return uniform_policy(c.env.horizon, c.env.alphabet, c.gamma);
}

void write_config_echo(const RunContext& ctx, const std::string& env_hash) {
  OutputFile f(ctx.out / "config.txt");
  f.line(hash_header(config_hash(ctx.config), env_hash));
  f.line(echo_config(ctx.config));
}

void write_json(const RunContext& ctx, const fs::path& name, json doc, const std::string& env_hash) {
  doc["config_hash"] = config_hash(ctx.config);
  doc["env_hash"] = env_hash;
  OutputFile f(ctx.out / name);
  f.line(doc.dump(2));
}

json header_record(const RunContext& ctx, const std::string& env_hash) {
  return {{"config_hash", config_hash(ctx.config)}, {"env_hash", env_hash}};
}

json taskset_document(const TaskSet& set) {
  json doc = taskset_to_json(set);
  for (std::size_t i = 0; i < set.tasks.size(); ++i) doc["tasks"][i]["env_hash"] = env_hash(set.tasks[i].env);
  return doc;
}

int max_level_of(const ExperimentConfig& c, const Task& task) {
  const int L = task.reference.length();
  return c.train.max_level > 0 ? std::min(c.train.max_level, L) : L;
}

// Barrier end of the unguided policy, or T when the env has no barrier.
int barrier_end_of(const EnvSpec& env, const PolicyParams& params) {
  const auto profile = mass_profile(env, step_distributions(params));
  return profile.barriers.empty() ? env.horizon : profile.barriers.back().end();
}

}  // namespace

std::vector<Variant> ablation_variants(const ExperimentConfig& config) {
  std::vector<Variant> out;
  auto add = [&](std::string label, TrainMode mode, RatioMode ratio, int k = 0) {
    TrainConfig t = config.train;
    t.mode = mode;
    t.ratio_mode = ratio;
    t.fixed_k = k;
    out.push_back({std::move(label), t});
  };
  add("vanilla", TrainMode::vanilla, RatioMode::mixed);
  add("actguide", TrainMode::actguide, RatioMode::mixed);
  add("actguide/naive", TrainMode::actguide, RatioMode::naive);
  for (int k : config.ablate_fixed_k) add("fixed-k:" + std::to_string(k), TrainMode::fixed_k, RatioMode::mixed, k);
  add("always-guided", TrainMode::always_guided, RatioMode::mixed);
  add("always-guided/naive", TrainMode::always_guided, RatioMode::naive);
  add("opsd", TrainMode::opsd, RatioMode::mixed);
  return out;
}

TrainOutcome train_variant(const RunContext& ctx, const TaskSet& tasks, const TrainConfig& train,
                           const std::optional<std::string>& stem, bool full_artifacts) {
  const std::string chash = config_hash(ctx.config);
  const std::string ehash = taskset_hash(tasks);
  const std::string suffix = stem && !stem->empty() ? "_" + sanitize(*stem) : "";

  std::unique_ptr<OutputFile> metrics, selection, trajectories;
  TrainHooks hooks;
  if (stem) {
    metrics = std::make_unique<OutputFile>(ctx.out / ("metrics" + suffix + ".csv"));
    metrics->line(hash_header(chash, ehash));
    metrics->line(kMetricsHeader);
    selection = std::make_unique<OutputFile>(ctx.out / ("selection" + suffix + ".jsonl"));
    selection->line(header_record(ctx, ehash).dump());

    const std::string label = stem->empty() ? to_string(train.mode) : *stem;
    hooks.on_step = [&, label](const StepMetrics& m) {
      metrics->line(metrics_row(m));
      const int every = std::max(1, train.steps / 10);
      if (m.step % every == 0 || m.step == train.steps)
        say(ctx, "[" + label + "] step " + std::to_string(m.step) + " exact_success=" + format_double(m.exact_success) +
                     " trainable=" + format_double(m.trainable_frac));
    };
    hooks.on_selection = [&](const SelectionRecord& rec) {
      json j = selection_trace(rec.task_id, rec.result);
      j["step"] = rec.step;
      if (rec.reverify_agreed) j["reverify_agreed"] = *rec.reverify_agreed;
      selection->line(j.dump());
    };
  }
  if (stem && full_artifacts) {
    hooks.checkpoint_interval = ctx.config.checkpoint_interval > 0 ? ctx.config.checkpoint_interval : train.steps;
    hooks.on_checkpoint = [&](int step, const std::vector<PolicyParams>& params) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Task& task = tasks.tasks[i];
        json doc = checkpoint_to_json(params[i], env_hash(task.env), step);
        doc["config_hash"] = chash;
        doc["task_id"] = task.id;
        OutputFile f(ctx.out / "checkpoints" /
                     ("task" + std::to_string(task.id) + "_step" + std::to_string(step) + suffix + ".json"));
        f.line(doc.dump());
      }
    };
    if (ctx.config.dump_trajectories) {
      trajectories = std::make_unique<OutputFile>(ctx.out / ("trajectories" + suffix + ".jsonl"));
      trajectories->line(header_record(ctx, ehash).dump());
      hooks.on_group = [&](int step, const RolloutGroup& g) {
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
          json j = trajectory_to_json(g.trajectories[i], g.task_id);
          j["step"] = step;
          j["advantage"] = g.advantages[i];
          trajectories->line(j.dump());
        }
      };
    }
  }

  const auto result = guidelab::train(tasks.tasks, initial_params(ctx.config), train, ctx.config.seed, hooks);
  TrainOutcome out;
  for (std::size_t i = 0; i < tasks.tasks.size(); ++i)
    out.per_task.push_back(exact_success(tasks.tasks[i].env, step_distributions(result.params[i])));
  out.final_exact_success = mean_exact_success(tasks.tasks, result.params);
  return out;
}

int run_gen_tasks(const RunContext& ctx) {
  const TaskSet set = build_taskset(ctx.config);
  const std::string ehash = taskset_hash(set);
  write_config_echo(ctx, ehash);
  write_json(ctx, "tasks.json", taskset_document(set), ehash);
  say(ctx, "wrote " + std::to_string(set.tasks.size()) + " tasks to " + (ctx.out / "tasks.json").string());
  return 0;
}

int run_train(const RunContext& ctx) {
  const TaskSet set = build_taskset(ctx.config);
  const std::string ehash = taskset_hash(set);
  write_config_echo(ctx, ehash);
  write_json(ctx, "tasks.json", taskset_document(set), ehash);

  const auto outcome = train_variant(ctx, set, ctx.config.train, std::string{}, true);
  TrainConfig baseline = ctx.config.train;
  baseline.mode = TrainMode::vanilla;
  const auto vanilla = ctx.config.train.mode == TrainMode::vanilla ? outcome : train_variant(ctx, set, baseline, std::nullopt, false);

  json summary;
  summary["command"] = "train";
  summary["mode"] = to_string(ctx.config.train.mode);
  summary["final_exact_success"] = outcome.final_exact_success;
  summary["per_task"] = outcome.per_task;
  summary["vanilla_final_exact_success"] = vanilla.final_exact_success;
  summary["delta_vs_vanilla"] = outcome.final_exact_success - vanilla.final_exact_success;
  write_json(ctx, "summary.json", summary, ehash);
  say(ctx, "final exact success " + format_double(outcome.final_exact_success) + " (vanilla " +
               format_double(vanilla.final_exact_success) + ")");
  return 0;
}

int run_ablate(const RunContext& ctx) {
  const TaskSet set = build_taskset(ctx.config);
  const std::string ehash = taskset_hash(set);
  write_config_echo(ctx, ehash);

  const auto variants = ablation_variants(ctx.config);
  std::vector<TrainOutcome> outcomes;
  for (const auto& v : variants) outcomes.push_back(train_variant(ctx, set, v.train, v.label, false));
  const double vanilla = outcomes.front().final_exact_success;

  OutputFile csv(ctx.out / "summary.csv");
  csv.line(hash_header(config_hash(ctx.config), ehash));
  csv.line("variant,mode,ratio_mode,fixed_k,final_exact_success,delta_vs_vanilla");
  json rows = json::array();
  double actguide = 0.0, always_naive = 0.0, best_fixed = -1.0;
  int best_k = 0;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto& v = variants[i];
    const double s = outcomes[i].final_exact_success;
    csv.line(v.label + "," + to_string(v.train.mode) + "," + to_string(v.train.ratio_mode) + "," +
             std::to_string(v.train.fixed_k) + "," + format_double(s) + "," + format_double(s - vanilla));
    rows.push_back({{"variant", v.label}, {"final_exact_success", s}, {"delta_vs_vanilla", s - vanilla},
                    {"per_task", outcomes[i].per_task}});
    if (v.label == "actguide") actguide = s;
    if (v.label == "always-guided/naive") always_naive = s;
    if (v.train.mode == TrainMode::fixed_k && s > best_fixed) {
      best_fixed = s;
      best_k = v.train.fixed_k;
    }
    say(ctx, v.label + ": " + format_double(s));
  }

  json summary;
  summary["command"] = "ablate";
  summary["variants"] = rows;
  if (best_fixed >= 0.0) {
    summary["best_fixed_k"] = best_k;
    summary["actguide_ge_best_fixed"] = actguide >= best_fixed;
    summary["best_fixed_ge_always_naive"] = best_fixed >= always_naive;
  }
  write_json(ctx, "summary.json", summary, ehash);
  return 0;
}

int run_noise_sweep(const RunContext& ctx) {
  const TaskSet clean = generate_taskset(ctx.config.env, ctx.config.mix, ctx.config.task_count, ctx.config.seed);
  const std::string ehash = taskset_hash(clean);
  write_config_echo(ctx, ehash);

  OutputFile csv(ctx.out / "summary.csv");
  csv.line(hash_header(config_hash(ctx.config), ehash));
  csv.line("noise_ratio,final_exact_success,delta_vs_first");
  json rows = json::array();
  std::optional<double> first;
  for (double ratio : ctx.config.noise_ratios) {
    const TaskSet set = ratio > 0.0 ? with_noise(clean, ratio, ctx.config.seed) : clean;
    const auto o = train_variant(ctx, set, ctx.config.train, "noise_" + format_double(ratio), false);
    if (!first) first = o.final_exact_success;
    csv.line(format_double(ratio) + "," + format_double(o.final_exact_success) + "," +
             format_double(o.final_exact_success - *first));
    rows.push_back({{"noise_ratio", ratio}, {"final_exact_success", o.final_exact_success}, {"per_task", o.per_task}});
    say(ctx, "noise " + format_double(ratio) + ": " + format_double(o.final_exact_success));
  }
  TrainConfig baseline = ctx.config.train;
  baseline.mode = TrainMode::vanilla;
  const auto vanilla = train_variant(ctx, clean, baseline, std::nullopt, false);

  json summary;
  summary["command"] = "noise-sweep";
  summary["mode"] = to_string(ctx.config.train.mode);
  summary["ratios"] = rows;
  summary["vanilla_final_exact_success"] = vanilla.final_exact_success;
  write_json(ctx, "summary.json", summary, ehash);
  return 0;
}

int run_risk_curve(const RunContext& ctx) {
  const Task task = analysis_task(ctx.config);
  const std::string ehash = env_hash(task.env);
  const std::string chash = config_hash(ctx.config);
  write_config_echo(ctx, ehash);
  const PolicyParams params = initial_params(ctx.config);
  const int K = max_level_of(ctx.config, task);
  std::vector<int> levels(static_cast<std::size_t>(K + 1));
  std::iota(levels.begin(), levels.end(), 0);

  const auto reports = risk_curve(task.env, params, task.reference, levels, ctx.config.analysis.rollouts, ctx.config.seed);
  const int barrier_end = barrier_end_of(task.env, params);
  std::vector<double> ks, risks, benefits;
  OutputFile csv(ctx.out / "risk_curve.csv");
  csv.line(hash_header(chash, ehash));
  csv.line("k,mean_shift,R_k,var_sum,cov_sum");
  json intervals = json::array();
  for (const auto& r : reports) {
    csv.line(std::to_string(r.k) + "," + format_double(r.mean_shift) + "," + format_double(r.risk) + "," +
             format_double(r.variance_sum) + "," + format_double(r.covariance_sum));
    ks.push_back(r.k);
    risks.push_back(r.risk);
    benefits.push_back(barrier_repair(task.env, params, level(task.reference, r.k), barrier_end).value);
    const auto ci = bootstrap_variance_ci(r.shift_samples, ctx.config.analysis.bootstrap, 0.95,
                                          derive_stream(ctx.config.seed, {0x626f6f74ULL, static_cast<std::uint64_t>(r.k)}));
    intervals.push_back({{"k", r.k}, {"lo", ci.lo}, {"hi", ci.hi}});
  }

  OutputFile ucsv(ctx.out / "utility.csv");
  ucsv.line(hash_header(chash, ehash));
  ucsv.line("lambda,k,proportion,B_k,R_k,U_k");
  json argmax = json::array();
  for (double lambda : ctx.config.analysis.lambdas) {
    const auto utility = utility_curve(benefits, risks, lambda);
    for (std::size_t i = 0; i < ks.size(); ++i)
      ucsv.line(format_double(lambda) + "," + std::to_string(static_cast<int>(ks[i])) + "," +
                format_double(K > 0 ? ks[i] / K : 0.0) + "," + format_double(utility.benefit[i]) + "," +
                format_double(utility.risk[i]) + "," + format_double(utility.utility[i]));
    argmax.push_back({{"lambda", lambda}, {"k", utility.argmax}});
  }

  json summary;
  summary["command"] = "risk-curve";
  summary["task_id"] = task.id;
  summary["spearman_k_risk"] = spearman(ks, risks);
  summary["risk_ci95"] = intervals;
  summary["barrier_end"] = barrier_end;
  summary["utility_argmax"] = argmax;
  write_json(ctx, "summary.json", summary, ehash);
  say(ctx, "spearman(k, R_k) = " + format_double(summary["spearman_k_risk"].get<double>()));
  return 0;
}

int run_barrier_profile(const RunContext& ctx, std::optional<int> k) {
  const Task task = analysis_task(ctx.config);
  const std::string ehash = env_hash(task.env);
  write_config_echo(ctx, ehash);
  const PolicyParams params = initial_params(ctx.config);
  const int K = max_level_of(ctx.config, task);
  const int lvl = k ? *k : K;
  if (lvl < 0 || lvl > task.reference.length()) throw ConfigError("--k must be in [0, plan length]");

  const auto rows = barrier_profile(task.env, params, level(task.reference, lvl), ctx.config.analysis.pass_k,
                                    ctx.config.analysis.pass_trials, ctx.config.seed);
  OutputFile csv(ctx.out / "barrier_profile.csv");
  csv.line(hash_header(config_hash(ctx.config), ehash));
  csv.line("t,M_t,kappa_t,pass_at_k,delta_logit,pass_at_k_mc,alive");
  for (const auto& r : rows)
    csv.line(std::to_string(r.t) + "," + format_double(r.mass) + "," +
             (r.retention ? format_double(*r.retention) : std::string("nan")) + "," + format_double(r.pass_at_k) + "," +
             format_double(r.delta_logit) + "," + format_double(r.pass_at_k_mc) + "," + (r.alive ? "1" : "0"));

  const auto profile = mass_profile(task.env, step_distributions(params));
  json barriers = json::array();
  for (const auto& b : profile.barriers) barriers.push_back({{"start", b.start}, {"length", b.length}});
  json summary;
  summary["command"] = "barrier-profile";
  summary["task_id"] = task.id;
  summary["level"] = lvl;
  summary["barriers"] = barriers;
  write_json(ctx, "summary.json", summary, ehash);
  say(ctx, "wrote " + (ctx.out / "barrier_profile.csv").string());
  return 0;
}

int run_select_level(const RunContext& ctx) {
  const Task task = analysis_task(ctx.config);
  const std::string ehash = env_hash(task.env);
  write_config_echo(ctx, ehash);
  const auto& a = ctx.config.analysis;
  const PolicyParams params = initial_params(ctx.config);
  const int K = max_level_of(ctx.config, task);

  const auto study = selection_study(task.env, params, task.reference, K, ctx.config.train.group_size,
                                     ctx.config.train.delta, a.rho, a.margin, a.xi, a.rollouts, ctx.config.seed,
                                     a.trial_count);
  OutputFile csv(ctx.out / "selection_study.csv");
  csv.line(hash_header(config_hash(ctx.config), ehash));
  csv.line("k,Q_hat,R_hat,selected,Q_exact,trials");
  for (std::size_t k = 0; k < study.q_hat.size(); ++k)
    csv.line(std::to_string(k) + "," + format_double(study.q_hat[k]) + "," + format_double(study.r_hat[k]) + "," +
             (study.k_rho_star && *study.k_rho_star == static_cast<int>(k) ? "1" : "0") + "," +
             format_double(study.q_exact[k]) + "," + std::to_string(study.trial_count[k]));

  json summary;
  summary["command"] = "select-level";
  summary["task_id"] = task.id;
  summary["rho"] = a.rho;
  summary["hoeffding_budget"] = study.budget_m;
  summary["k_rho_star"] = study.k_rho_star ? json(*study.k_rho_star) : json(nullptr);
  write_json(ctx, "summary.json", summary, ehash);
  say(ctx, study.k_rho_star ? "selected level " + std::to_string(*study.k_rho_star) : std::string("no level reaches rho"));
  return 0;
}

}  // namespace guidelab::harness
