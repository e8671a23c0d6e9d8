#include <doctest.h>

#include <cmath>

#include "guidelab/env.hpp"
#include "guidelab/harness/taskset.hpp"
#include "guidelab/harness/verify.hpp"
#include "guidelab/optimizer.hpp"

using namespace guidelab;

namespace {

Trajectory one_step(Action a, Source src, std::optional<Action> rec, double logp) {
  Trajectory tr;
  tr.steps.push_back(StepRecord{State{0, true}, a, logp, rec});
  tr.source = src;
  tr.level = src == Source::guided ? 1 : 0;
  tr.final_state = State{1, true};
  tr.reward = 1;
  return tr;
}

TrainConfig quiet_config() {
  TrainConfig c;
  c.kl_coeff = 0.0;
  return c;
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("advantages") {
    const auto a = compute_advantages(std::vector<double>{1, 0, 0, 0}, AdvantageMode::mean_centered);
    CHECK(a == std::vector<double>{0.75, -0.25, -0.25, -0.25});
    const auto z = compute_advantages(std::vector<double>{0, 0, 0}, AdvantageMode::std_normalized);
    CHECK(z == std::vector<double>{0, 0, 0});
    const auto s = compute_advantages(std::vector<double>{1, 1, 0, 0}, AdvantageMode::std_normalized);
    CHECK(s == std::vector<double>{1, 1, -1, -1});
    CHECK_THROWS(compute_advantages(std::vector<double>{}, AdvantageMode::mean_centered));
  }

  TEST_CASE("joint pooling uses one mean over the merged groups") {
    const auto chain = make_barrier_chain(4, 4, 2, {{1, 2}});
    const auto params = uniform_policy(4, 4);
    const ReferenceTrajectory ref{chain.canonical};
    std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 8, 1),
                                     sample_group(chain.spec, params, level(ref, 4), 8, 2)};
    assign_advantages(groups, AdvantageMode::mean_centered, AdvantagePooling::joint);
    double mean = 0.0;
    for (const auto& g : groups)
      for (double r : g.rewards()) mean += r / 16.0;
    for (const auto& g : groups)
      for (std::size_t i = 0; i < 8; ++i) CHECK(g.advantages[i] == doctest::Approx(g.rewards()[i] - mean));
    assign_advantages(groups, AdvantageMode::mean_centered, AdvantagePooling::per_source);
    for (const auto& g : groups) CHECK(g.advantages == compute_advantages(g.rewards(), AdvantageMode::mean_centered));
  }

  TEST_CASE("ratio denominators follow the rollout source") {
    const auto p = uniform_policy(1, 2, std::log(3.0));
    const StepRecord on_rec{State{0, true}, 0, 0.0, Action{0}};
    const StepRecord off_rec{State{0, true}, 1, 0.0, Action{0}};
    CHECK(mixed_ratio(p, p, on_rec, Source::guided) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(mixed_ratio(p, p, off_rec, Source::guided) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(mixed_ratio(p, p, on_rec, Source::unguided) == 1.0);
    CHECK(mixed_ratio(p, p, on_rec, Source::guided, RatioMode::naive) == 1.0);
  }

  TEST_CASE("ratio at theta_old: 1 for unguided tokens, closed form for guided ones") {
    Rng rng(2);
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const auto params = harness::random_policy(rng, 6, 4, 1.0);
    const ReferenceTrajectory ref{chain.canonical};
    const auto plain = sample_group(chain.spec, params, std::nullopt, 20, 3);
    for (const auto& tr : plain.trajectories)
      for (const auto& st : tr.steps) CHECK(mixed_ratio(params, params, st, tr.source) == 1.0);
    const auto guided = sample_group(chain.spec, params, level(ref, 3), 20, 4);
    for (const auto& tr : guided.trajectories)
      for (const auto& st : tr.steps) {
        const double expected =
            probabilities(params, st.state.t, std::nullopt)[static_cast<std::size_t>(st.action)] /
            probabilities(params, st.state.t, st.recommended)[static_cast<std::size_t>(st.action)];
        CHECK(mixed_ratio(params, params, st, tr.source) == doctest::Approx(expected).epsilon(1e-13));
      }
  }

  TEST_CASE("analytic gradients match finite differences") {
    const auto outcome =
        harness::check_gradient_fidelity(harness::analytic_mixed_grad(), harness::analytic_opsd_grad(), 60, 21);
    INFO(outcome.measured);
    CHECK(outcome.passed);
  }

  TEST_CASE("the fidelity check rejects a corrupted gradient") {
    const auto mixed = harness::analytic_mixed_grad();
    auto corrupted = [mixed](const PolicyParams& p, std::span<const RolloutGroup> g, const PolicyParams& old,
                             const PolicyParams& ref, const TrainConfig& c) {
      auto out = mixed(p, g, old, ref, c);
      for (auto& x : out.grad.data()) x *= 1.01;
      return out;
    };
    CHECK_FALSE(harness::check_gradient_fidelity(corrupted, harness::analytic_opsd_grad(), 30, 5).passed);
    const auto opsd = harness::analytic_opsd_grad();
    auto flipped = [opsd](const PolicyParams& p, const PolicyParams& old, std::span<const RolloutGroup> g,
                          const GuidanceContext& ctx) {
      auto grad = opsd(p, old, g, ctx);
      for (auto& x : grad.data()) x = -x;
      return grad;
    };
    CHECK_FALSE(harness::check_gradient_fidelity(harness::analytic_mixed_grad(), flipped, 30, 5).passed);
  }

  TEST_CASE("zero advantages at the reference give a zero gradient") {
    const auto chain = make_barrier_chain(4, 4, 4, {});
    Rng rng(3);
    const auto params = harness::random_policy(rng, 4, 4, 1.0);
    std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 8, 1)};
    assign_advantages(groups, AdvantageMode::mean_centered, AdvantagePooling::joint);
    for (double a : groups[0].advantages) CHECK(a == 0.0);
    TrainConfig cfg;
    const auto out = mixed_objective_grad(params, groups, params, params, cfg);
    CHECK(out.report.grad_norm == 0.0);
    CHECK_FALSE(out.report.trainable);
    CHECK(out.report.kl == doctest::Approx(0.0).scale(1.0));
    CHECK(out.report.clip_fraction == 0.0);
  }

  TEST_CASE("a token on the clipped branch contributes no gradient") {
    const auto old = uniform_policy(1, 2);
    auto params = old;
    params.logits(0, 0) = std::log(7.0 / 3.0);  // pi(0) = 0.7, ratio 1.4 = 1 + 2 eps
    RolloutGroup g;
    g.trajectories.push_back(one_step(0, Source::unguided, std::nullopt, std::log(0.5)));
    g.advantages = {0.5};
    std::vector<RolloutGroup> groups{g};
    const auto out = mixed_objective_grad(params, groups, old, old, quiet_config());
    CHECK(out.report.grad_norm == 0.0);
    CHECK(out.report.clip_fraction == 1.0);
    // Inside the trust region the gradient is adv * r * dlog pi / token count.
    params.logits(0, 0) = std::log(1.1 / 0.9);  // pi(0) = 0.55, ratio 1.1
    const auto inside = mixed_objective_grad(params, groups, old, old, quiet_config());
    CHECK(inside.report.clip_fraction == 0.0);
    CHECK(inside.grad(0, 0) == doctest::Approx(0.5 * 1.1 * 0.45).epsilon(1e-12));
    CHECK(inside.grad(0, 1) == doctest::Approx(-0.5 * 1.1 * 0.45).epsilon(1e-12));
  }

  TEST_CASE("clip fraction is zero at theta_old for unguided data") {
    Rng rng(4);
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const auto params = harness::random_policy(rng, 6, 4, 1.0);
    std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 32, 5)};
    assign_advantages(groups, AdvantageMode::mean_centered, AdvantagePooling::joint);
    CHECK(mixed_objective_grad(params, groups, params, params, TrainConfig{}).report.clip_fraction == 0.0);
  }

  TEST_CASE("one step on a successful guided group raises unguided barrier log-probs") {
    const auto chain = make_barrier_chain(12, 8, 6, {{4, 4}});
    const auto params = uniform_policy(12, 8);
    const ReferenceTrajectory ref{chain.canonical};
    std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 8, 1),
                                     sample_group(chain.spec, params, level(ref, 12), 8, 2)};
    double successes = 0;
    for (double r : groups[1].rewards()) successes += r;
    REQUIRE(successes >= 1);
    assign_advantages(groups, AdvantageMode::mean_centered, AdvantagePooling::joint);
    const auto out = mixed_objective_grad(params, groups, params, params, TrainConfig{});
    CHECK(out.report.trainable);
    auto next = params;
    for (std::size_t i = 0; i < next.logits.data().size(); ++i) next.logits.data()[i] += out.grad.data()[i];
    for (int t = 4; t < 8; ++t) {
      const Action a = chain.canonical[static_cast<std::size_t>(t)];
      CHECK(out.grad(t, a) > 0.0);
      CHECK(log_prob(next, t, a) > log_prob(params, t, a));
    }
  }

  TEST_CASE("opsd: no teacher signal without guidance strength") {
    const auto chain = make_barrier_chain(4, 3, 2, {{1, 1}});
    const auto params = uniform_policy(4, 3, 0.0);
    std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 4, 1)};
    const GuidanceContext ctx(chain.canonical);
    const Table grad = opsd_grad(params, params, groups, ctx);
    for (double x : grad.data()) CHECK(x == 0.0);
    CHECK(opsd_loss(params, params, groups, ctx) == 0.0);
  }

  TEST_CASE("opsd loss is non-negative") {
    Rng rng(6);
    for (int rep = 0; rep < 30; ++rep) {
      const EnvSpec env = harness::random_env(rng, 5, 4);
      const auto p = harness::random_policy(rng, env.horizon, env.alphabet, 2.0);
      const auto q = harness::random_policy(rng, env.horizon, env.alphabet, 2.0);
      std::vector<RolloutGroup> groups{sample_group(env, q, std::nullopt, 4, rep)};
      std::vector<Action> plan(static_cast<std::size_t>(env.horizon), 0);
      CHECK(opsd_loss(p, q, groups, GuidanceContext(plan)) >= 0.0);
    }
  }

  TEST_CASE("opsd descent converges to the guided teacher") {
    const auto chain = make_barrier_chain(1, 2, 2, {});
    const auto old = uniform_policy(1, 2, std::log(3.0));
    std::vector<RolloutGroup> groups{sample_group(chain.spec, old, std::nullopt, 4, 1)};
    const GuidanceContext ctx({0});
    auto student = old;
    for (int i = 0; i < 2000; ++i) {
      const auto g = opsd_grad(student, old, groups, ctx);
      for (std::size_t j = 0; j < 2; ++j) student.logits.data()[j] -= 1.0 * g.data()[j];
    }
    const auto p = probabilities(student, 0, std::nullopt);
    CHECK(std::abs(p[0] - 0.75) < 1e-6);
    CHECK(std::abs(p[1] - 0.25) < 1e-6);
  }

  TEST_CASE("mode and option names round trip") {
    for (auto m : {TrainMode::vanilla, TrainMode::actguide, TrainMode::fixed_k, TrainMode::always_guided, TrainMode::opsd})
      CHECK(parse_train_mode(to_string(m)) == m);
    for (auto m : {AdvantageMode::mean_centered, AdvantageMode::std_normalized})
      CHECK(parse_advantage_mode(to_string(m)) == m);
    for (auto m : {AdvantagePooling::joint, AdvantagePooling::per_source})
      CHECK(parse_advantage_pooling(to_string(m)) == m);
    for (auto m : {RatioMode::mixed, RatioMode::naive}) CHECK(parse_ratio_mode(to_string(m)) == m);
    CHECK_THROWS(parse_train_mode("guided"));
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.clip = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.group_size = 1;
    CHECK_THROWS(c.validate());
    c = {};
    c.learning_rate = -1.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.kl_coeff = -0.1;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("no barrier: success stays at 1 and the policy barely moves") {
    const auto chain = make_barrier_chain(6, 4, 4, {});
    const std::vector<Task> tasks{Task{0, "easy", chain.spec, ReferenceTrajectory{chain.canonical}}};
    const auto init = uniform_policy(6, 4);
    for (auto mode : {TrainMode::vanilla, TrainMode::actguide, TrainMode::opsd}) {
      TrainConfig c;
      c.mode = mode;
      c.steps = 20;
      const auto r = train(tasks, init, c, 3);
      REQUIRE(r.log.size() == 20);
      for (const auto& m : r.log) {
        CHECK(m.exact_success == doctest::Approx(1.0));
        CHECK(m.trainable_frac == 0.0);
      }
      double drift = 0.0;
      for (std::size_t i = 0; i < init.logits.data().size(); ++i)
        drift = std::max(drift, std::abs(r.params[0].logits.data()[i] - init.logits.data()[i]));
      // The distillation step still pulls the student toward the guided teacher.
      if (mode != TrainMode::opsd) CHECK(drift < 1e-12);
    }
  }

  TEST_CASE("guided training crosses a barrier that vanilla cannot") {
    const auto chain = make_barrier_chain(8, 6, 4, {{3, 3}});
    const std::vector<Task> tasks{Task{0, "hard", chain.spec, ReferenceTrajectory{chain.canonical}}};
    const auto init = uniform_policy(8, 6);
    TrainConfig c;
    c.steps = 100;
    c.mode = TrainMode::vanilla;
    const double vanilla = train(tasks, init, c, 4).log.back().exact_success;
    c.mode = TrainMode::actguide;
    int selections = 0;
    TrainHooks hooks;
    hooks.on_selection = [&](const SelectionRecord&) { ++selections; };
    const auto guided = train(tasks, init, c, 4, hooks);
    CHECK(selections > 0);
    CHECK(guided.log.back().exact_success > vanilla + 0.5);
  }

  TEST_CASE("training is deterministic in the seed") {
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const std::vector<Task> tasks{Task{0, "medium", chain.spec, ReferenceTrajectory{chain.canonical}}};
    TrainConfig c;
    c.steps = 15;
    const auto a = train(tasks, uniform_policy(6, 4), c, 8);
    const auto b = train(tasks, uniform_policy(6, 4), c, 8);
    CHECK(a.params == b.params);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].grad_norm == b.log[i].grad_norm);
  }

  TEST_CASE("shape mismatches are rejected") {
    const auto chain = make_barrier_chain(6, 4, 2, {});
    const std::vector<Task> tasks{Task{0, "easy", chain.spec, ReferenceTrajectory{chain.canonical}}};
    CHECK_THROWS(train(tasks, uniform_policy(5, 4), TrainConfig{}, 1));
    CHECK_THROWS(train(std::vector<Task>{}, uniform_policy(6, 4), TrainConfig{}, 1));
  }
}
