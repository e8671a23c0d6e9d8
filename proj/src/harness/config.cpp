#include "guidelab/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace guidelab::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) throw ConfigError(key + ": not a valid number: '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(values[i]);
    else
      out += std::to_string(values[i]);
  }
  return out;
}

struct Field {
  std::string key;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field num(std::string key, std::string doc, T ExperimentConfig::*member) {
  return {key, std::move(doc), [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(c.*member);
            else
              return std::to_string(c.*member);
          }};
}

// Same as num() for members of a nested struct.
template <class S, class T>
Field nested(std::string key, std::string doc, S ExperimentConfig::*outer, T S::*member) {
  return {key, std::move(doc),
          [outer, member, key](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>)
              c.*outer.*member = parse_bool(key, v);
            else if constexpr (std::is_same_v<T, std::string>)
              c.*outer.*member = v;
            else
              c.*outer.*member = parse_number<T>(key, v);
          },
          [outer, member](const ExperimentConfig& c) -> std::string {
            const T& v = c.*outer.*member;
            if constexpr (std::is_same_v<T, bool>)
              return v ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::string>)
              return v;
            else if constexpr (std::is_floating_point_v<T>)
              return format_double(v);
            else
              return std::to_string(v);
          }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(num<std::uint64_t>("seed", "base seed of every random stream", &C::seed));
    f.push_back({"output", "output directory (empty: $GUIDELAB_OUT/<command> or runs/<command>)",
                 [](C& c, const std::string& v) { c.output = v; }, [](const C& c) { return c.output; }});

    f.push_back(nested("env.horizon", "steps per episode T", &C::env, &EnvShape::horizon));
    f.push_back(nested("env.alphabet", "action count A", &C::env, &EnvShape::alphabet));
    f.push_back(nested("env.easy_safe_size", "safe actions at non-barrier steps", &C::env, &EnvShape::easy_safe_size));
    f.push_back(nested("env.leak", "death probability on a safe move", &C::env, &EnvShape::leak));
    f.push_back(nested("env.medium_barrier_len", "barrier length of medium tasks", &C::env, &EnvShape::medium_barrier_len));
    f.push_back(nested("env.hard_barrier_len", "barrier length of hard tasks", &C::env, &EnvShape::hard_barrier_len));

    f.push_back(num<int>("tasks.count", "number of generated tasks", &C::task_count));
    f.push_back({"tasks.mix", "difficulty proportions, e.g. easy:0.5,hard:0.5",
                 [](C& c, const std::string& v) {
                   try {
                     c.mix = parse_mix(v);
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("tasks.mix: ") + e.what());
                   }
                 },
                 [](const C& c) { return format_mix(c.mix); }});

    f.push_back({"train.mode", "vanilla | actguide | fixed-k | always-guided | opsd",
                 [](C& c, const std::string& v) {
                   try {
                     c.train.mode = parse_train_mode(v);
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("train.mode: ") + e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.train.mode); }});
    f.push_back(nested("train.fixed_k", "guidance level of fixed-k mode", &C::train, &TrainConfig::fixed_k));
    f.push_back(nested("train.steps", "training steps", &C::train, &TrainConfig::steps));
    f.push_back(nested("train.minibatch_size", "tasks per step M", &C::train, &TrainConfig::minibatch_size));
    f.push_back(nested("train.group_size", "rollouts per group N", &C::train, &TrainConfig::group_size));
    f.push_back(nested("train.clip", "surrogate clip epsilon", &C::train, &TrainConfig::clip));
    f.push_back(nested("train.kl_coeff", "KL penalty beta", &C::train, &TrainConfig::kl_coeff));
    f.push_back(nested("train.learning_rate", "gradient ascent step size", &C::train, &TrainConfig::learning_rate));
    f.push_back({"train.advantage_mode", "mean_centered | std_normalized",
                 [](C& c, const std::string& v) {
                   try {
                     c.train.advantage_mode = parse_advantage_mode(v);
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("train.advantage_mode: ") + e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.train.advantage_mode); }});
    f.push_back({"train.pooling", "joint | per_source",
                 [](C& c, const std::string& v) {
                   try {
                     c.train.pooling = parse_advantage_pooling(v);
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("train.pooling: ") + e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.train.pooling); }});
    f.push_back({"train.ratio_mode", "mixed | naive",
                 [](C& c, const std::string& v) {
                   try {
                     c.train.ratio_mode = parse_ratio_mode(v);
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("train.ratio_mode: ") + e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.train.ratio_mode); }});
    f.push_back(nested("train.reverify", "re-probe k* once and log agreement", &C::train, &TrainConfig::reverify));
    f.push_back(nested("train.reuse_probe", "train on the successful k* probe group", &C::train, &TrainConfig::reuse_probe));
    f.push_back(nested("train.opsd_coeff", "weight of the self-distillation step", &C::train, &TrainConfig::opsd_coeff));
    f.push_back(num<int>("train.checkpoint_interval", "steps between checkpoints (0: final only)", &C::checkpoint_interval));
    f.push_back({"train.dump_trajectories", "write every sampled trajectory to trajectories.jsonl",
                 [](C& c, const std::string& v) { c.dump_trajectories = parse_bool("train.dump_trajectories", v); },
                 [](const C& c) -> std::string { return c.dump_trajectories ? "true" : "false"; }});

    f.push_back(nested("guidance.max_level", "largest level K (0: plan length)", &C::train, &TrainConfig::max_level));
    f.push_back(num<double>("guidance.gamma", "logit bonus of the recommended action", &C::gamma));
    f.push_back(nested("guidance.delta", "fallback threshold on the max group reward", &C::train, &TrainConfig::delta));
    f.push_back(nested("guidance.budget", "binary search probe budget (0: ceil(log2 K) + 2)", &C::train, &TrainConfig::budget));
    f.push_back(num<double>("guidance.noise_ratio", "fraction of random actions inserted into plans", &C::noise_ratio));

    f.push_back(nested("analysis.difficulty", "preset of the task studied by analyses", &C::analysis, &AnalysisConfig::difficulty));
    f.push_back(nested("analysis.rollouts", "guided rollouts per level for risk", &C::analysis, &AnalysisConfig::rollouts));
    f.push_back({"analysis.lambdas", "risk weights of the utility curve",
                 [](C& c, const std::string& v) { c.analysis.lambdas = parse_list<double>("analysis.lambdas", v); },
                 [](const C& c) { return join(c.analysis.lambdas); }});
    f.push_back(nested("analysis.rho", "target recovery probability", &C::analysis, &AnalysisConfig::rho));
    f.push_back(nested("analysis.margin", "Q margin used for the Hoeffding budget", &C::analysis, &AnalysisConfig::margin));
    f.push_back(nested("analysis.xi", "failure probability of the selection rule", &C::analysis, &AnalysisConfig::xi));
    f.push_back(nested("analysis.trial_count", "groups per level for Q (0: Hoeffding budget)", &C::analysis, &AnalysisConfig::trial_count));
    f.push_back(nested("analysis.pass_k", "K of Pass@K", &C::analysis, &AnalysisConfig::pass_k));
    f.push_back(nested("analysis.pass_trials", "Monte-Carlo batches for Pass@K", &C::analysis, &AnalysisConfig::pass_trials));
    f.push_back(nested("analysis.bootstrap", "bootstrap resamples for risk intervals", &C::analysis, &AnalysisConfig::bootstrap));

    f.push_back({"ablate.fixed_k", "fixed-k levels swept by ablate",
                 [](C& c, const std::string& v) { c.ablate_fixed_k = parse_list<int>("ablate.fixed_k", v); },
                 [](const C& c) { return join(c.ablate_fixed_k); }});
    f.push_back({"noise.ratios", "noise ratios swept by noise-sweep",
                 [](C& c, const std::string& v) { c.noise_ratios = parse_list<double>("noise.ratios", v); },
                 [](const C& c) { return join(c.noise_ratios); }});
    return f;
  }();
  return table;
}

}  // namespace

void validate_config(const ExperimentConfig& c) {
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.task_count < 1) throw ConfigError("tasks.count must be >= 1");
  double mix_total = 0.0;
  for (const auto& [name, p] : c.mix) {
    if (name != "easy" && name != "medium" && name != "hard") throw ConfigError("tasks.mix: unknown preset '" + name + "'");
    if (!(p >= 0.0)) throw ConfigError("tasks.mix proportions must be >= 0");
    mix_total += p;
  }
  if (std::abs(mix_total - 1.0) > 1e-9) throw ConfigError("tasks.mix proportions must sum to 1");
  if (!(c.gamma >= 0.0)) throw ConfigError("guidance.gamma must be >= 0");
  if (!(c.noise_ratio >= 0.0 && c.noise_ratio < 1.0)) throw ConfigError("guidance.noise_ratio must be in [0, 1)");
  if (c.analysis.lambdas.empty()) throw ConfigError("analysis.lambdas must not be empty");
  for (double l : c.analysis.lambdas)
    if (!(l >= 0.0)) throw ConfigError("analysis.lambdas entries must be >= 0");
  if (c.analysis.rollouts < 2) throw ConfigError("analysis.rollouts must be >= 2");
  if (!(c.analysis.margin > 0.0) || !(c.analysis.xi > 0.0 && c.analysis.xi < 1.0))
    throw ConfigError("analysis.margin must be > 0 and analysis.xi in (0, 1)");
  if (c.analysis.pass_k < 1 || c.analysis.pass_trials < 1) throw ConfigError("analysis.pass_k and pass_trials must be >= 1");
  if (c.checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
  for (int k : c.ablate_fixed_k)
    if (k < 1) throw ConfigError("ablate.fixed_k entries must be >= 1");
  for (double r : c.noise_ratios)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("noise.ratios entries must be in [0, 1)");
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  validate_config(base);
  return base;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& config) { return hex64(fnv1a64(echo_config(config))); }

std::vector<KeyDoc> config_schema() {
  const ExperimentConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.get(defaults), f.doc});
  return out;
}

}  // namespace guidelab::harness
