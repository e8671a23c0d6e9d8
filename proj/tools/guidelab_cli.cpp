// Command-line front end for the guidelab experiments.

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "guidelab/harness/config.hpp"
#include "guidelab/harness/experiment.hpp"
#include "guidelab/harness/verify.hpp"

namespace gl = guidelab;
namespace gh = guidelab::harness;

namespace {

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string mode;
  int k = 0;
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* k_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  f.seed_opt = cmd->add_option("--seed", f.seed, "base seed (overrides the config)");
  f.out_opt = cmd->add_option("--out", f.out, "output directory");
  f.mode_opt = cmd->add_option("--mode", f.mode, "training mode")
                   ->check(CLI::IsMember({"vanilla", "actguide", "fixed-k", "always-guided", "opsd"}));
  f.k_opt = cmd->add_option("--k", f.k, "guidance level for fixed-k (or the profiled level)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--quiet", f.quiet, "suppress progress output");
}

gh::RunContext make_context(const CommonFlags& f, const std::string& command) {
  gh::RunContext ctx;
  if (!f.config.empty()) ctx.config = gh::load_config(f.config);
  if (f.seed_opt->count()) ctx.config.seed = f.seed;
  if (f.mode_opt->count()) ctx.config.train.mode = gl::parse_train_mode(f.mode);
  if (f.k_opt->count()) ctx.config.train.fixed_k = f.k;
  gh::validate_config(ctx.config);
  ctx.out = gh::resolve_output(ctx.config, command,
                               f.out_opt->count() ? std::optional<std::string>(f.out) : std::nullopt);
  ctx.quiet = f.quiet;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive action guidance on barrier-chain tasks"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the default config with every key and exit");

  std::map<std::string, CommonFlags> flags;  // one set per subcommand
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen-tasks", "generate and save a task set"},
      {"train", "train one mode and write metrics, traces and checkpoints"},
      {"ablate", "train every ablation variant with identical seeds"},
      {"risk-curve", "off-policy risk and utility per guidance level"},
      {"barrier-profile", "mass, retention and Pass@K along a guided rollout"},
      {"noise-sweep", "train on plans with increasing action noise"},
      {"select-level", "risk-constrained level selection study"},
  };
  for (const auto& s : subs) add_common(app.add_subcommand(s.name, s.help), flags[s.name]);

  auto* verify = app.add_subcommand("verify", "run the acceptance and property checks");
  std::vector<std::string> only;
  bool verify_quiet = false;
  verify->add_option("--only", only, "check ids to run (e.g. 3 9 p:config)");
  verify->add_flag("--quiet", verify_quiet, "print only the summary line and failures");

  CLI11_PARSE(app, argc, argv);

  if (print_config) {
    std::cout << gh::echo_config({});
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    if (command == "verify") {
      auto checks = gh::acceptance_checks();
      for (auto& c : gh::property_checks()) checks.push_back(std::move(c));
      if (!only.empty())
        std::erase_if(checks, [&](const gh::Check& c) { return std::find(only.begin(), only.end(), c.id) == only.end(); });
      if (checks.empty()) {
        std::cerr << "no check matches --only\n";
        return 2;
      }
      const auto results = gh::run_checks(checks, verify_quiet ? nullptr : &std::cout);
      if (verify_quiet) {
        for (const auto& r : results)
          if (!r.passed()) std::cout << gh::format_result(r) << '\n';
      }
      int passed = 0;
      for (const auto& r : results) passed += r.passed();
      std::cout << passed << "/" << results.size() << " checks passed\n";
      return gh::all_passed(results) ? 0 : 1;
    }

    const CommonFlags& f = flags.at(command);
    const auto ctx = make_context(f, command);
    if (command == "gen-tasks") return gh::run_gen_tasks(ctx);
    if (command == "train") return gh::run_train(ctx);
    if (command == "ablate") return gh::run_ablate(ctx);
    if (command == "noise-sweep") return gh::run_noise_sweep(ctx);
    if (command == "risk-curve") return gh::run_risk_curve(ctx);
    if (command == "select-level") return gh::run_select_level(ctx);
    if (command == "barrier-profile")
      return gh::run_barrier_profile(ctx, f.k_opt->count() ? std::optional<int>(f.k) : std::nullopt);
  } catch (const gh::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const gl::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
