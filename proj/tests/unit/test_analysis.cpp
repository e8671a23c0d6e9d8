#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "guidelab/analysis.hpp"
#include "guidelab/harness/taskset.hpp"

using namespace guidelab;

namespace {

const BarrierChain& hard_chain() {
  static const BarrierChain chain = make_barrier_chain(12, 8, 6, {{4, 4}});
  return chain;
}

ReferenceTrajectory hard_ref() { return {hard_chain().canonical}; }

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("logit shift profile") {
    const auto params = uniform_policy(12, 8);
    const auto group = sample_group(hard_chain().spec, params, level(hard_ref(), 5), 1, 1);
    const auto prof = delta_logit_profile(params, group.trajectories[0]);
    REQUIRE(prof.size() == 12);
    for (int t = 0; t < 12; ++t) CHECK(prof[static_cast<std::size_t>(t)] == (t < 5 ? 4.0 : 0.0));
    const auto mean = delta_logit_profile(params, group.trajectories[0], DeltaLogitAggregation::mean_abs);
    CHECK(mean[0] == doctest::Approx(0.5));
    const auto flat = uniform_policy(12, 8, 0.0);
    for (double x : delta_logit_profile(flat, group.trajectories[0])) CHECK(x == 0.0);
  }

  TEST_CASE("barrier repair benefit") {
    const auto params = uniform_policy(12, 8);
    CHECK(barrier_repair(hard_chain().spec, params, level(hard_ref(), 0), 8).value == 0.0);
    const auto flat = uniform_policy(12, 8, 0.0);
    CHECK(barrier_repair(hard_chain().spec, flat, level(hard_ref(), 12), 8).value == 0.0);

    const auto full = barrier_repair(hard_chain().spec, params, level(hard_ref(), 12), 8);
    CHECK_FALSE(full.undefined);
    const double g = std::exp(4.0) / (std::exp(4.0) + 7.0);
    const double g_safe = (std::exp(4.0) + 5.0) / (std::exp(4.0) + 7.0);
    CHECK(full.guided_mass == doctest::Approx(std::pow(g_safe, 4) * std::pow(g, 4)).epsilon(1e-12));
    CHECK(full.unguided_mass == doctest::Approx(std::pow(0.75, 4) * std::pow(0.125, 4)).epsilon(1e-12));
    CHECK(full.value == doctest::Approx(std::log(full.guided_mass / full.unguided_mass)));

    // Monte-Carlo cross-check of the guided mass at the barrier end.
    const int n = 4000;
    const auto group = sample_group(hard_chain().spec, params, level(hard_ref(), 12), n, 3);
    const double frac = alive_fraction(group, 8);
    const double m = full.guided_mass;
    CHECK(std::abs(frac - m) <= 3 * std::sqrt(m * (1 - m) / n));
  }

  TEST_CASE("barrier repair is undefined when the unguided mass vanishes") {
    const auto chain = make_barrier_chain(2, 2, 1, {});
    auto params = uniform_policy(2, 2);
    params.logits(0, 0) = -1000.0;  // softmax underflows to exactly 0
    const auto r = barrier_repair(chain.spec, params, level(ReferenceTrajectory{chain.canonical}, 2), 2);
    CHECK(r.undefined);
    CHECK(std::isinf(r.value));
  }

  TEST_CASE("risk from hand-made step terms") {
    const auto r = risk_from_step_terms(2, {{1, 2}, {3, 5}, {0, 1}});
    CHECK(r.shift_samples == std::vector<double>{3, 8, 1});
    CHECK(r.mean_shift == doctest::Approx(4.0));
    CHECK(r.risk == doctest::Approx(13.0));
    CHECK(r.variance_sum == doctest::Approx(20.0 / 3));
    CHECK(r.covariance_sum == doctest::Approx(19.0 / 3));
    CHECK_THROWS(risk_from_step_terms(1, {{1.0}}));
  }

  TEST_CASE("risk decomposition identity holds on random samples") {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
      const int n = 2 + uniform_index(rng, 30), T = 1 + uniform_index(rng, 10);
      std::vector<std::vector<double>> terms(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(T)));
      for (auto& row : terms)
        for (auto& x : row) x = uniform01(rng) * 4 - 2 + (rep % 3 == 0 ? row[0] : 0.0);
      const auto r = risk_from_step_terms(1, terms);
      CHECK(r.risk >= 0.0);
      CHECK(std::abs(r.variance_sum + r.covariance_sum - r.risk) <= 1e-9 * std::max(1.0, r.risk));
    }
  }

  TEST_CASE("risk at level zero and without guidance strength") {
    const auto params = uniform_policy(12, 8);
    const auto r0 = risk_report(hard_chain().spec, params, level(hard_ref(), 0), 50, 1);
    CHECK(r0.risk == 0.0);
    for (double x : r0.shift_samples) CHECK(x == 0.0);
    const auto flat = uniform_policy(12, 8, 0.0);
    for (const auto& rep : risk_curve(hard_chain().spec, flat, hard_ref(), std::vector<int>{0, 4, 12}, 20, 2))
      CHECK(rep.risk == 0.0);
  }

  TEST_CASE("risk grows with the guidance level") {
    Rng rng(5);
    const auto params = harness::random_policy(rng, 12, 8, 0.1);
    std::vector<int> levels;
    for (int k = 0; k <= 12; ++k) levels.push_back(k);
    const auto curve = risk_curve(hard_chain().spec, params, hard_ref(), levels, 1000, 6);
    std::vector<double> ks, rs;
    for (const auto& rep : curve) {
      ks.push_back(rep.k);
      rs.push_back(rep.risk);
    }
    CHECK(spearman(ks, rs) > 0.9);
  }

  TEST_CASE("spearman with ties") {
    const std::vector<double> x{1, 2, 3, 4}, rev{4, 3, 2, 1};
    CHECK(spearman(x, x) == doctest::Approx(1.0));
    CHECK(spearman(x, rev) == doctest::Approx(-1.0));
    const std::vector<double> tied{1, 2, 2, 3};
    CHECK(spearman(tied, x) == doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)));
  }

  TEST_CASE("bootstrap interval narrows with more samples") {
    Rng rng(7);
    auto draw = [&](int n) {
      std::vector<double> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = uniform01(rng) * 2;
      return v;
    };
    const auto small = draw(200), large = draw(800);
    const auto a = bootstrap_variance_ci(small, 1000, 0.95, 1);
    const auto b = bootstrap_variance_ci(large, 1000, 0.95, 1);
    CHECK(a.lo <= a.hi);
    CHECK(b.width() < a.width());
    CHECK((b.lo < 1.0 / 3 && 1.0 / 3 < b.hi));
  }

  TEST_CASE("utility curve") {
    const std::vector<double> B{0, 0, 5, 5.1}, R{0, 1, 2, 10};
    const auto c = utility_curve(B, R, 1.0);
    CHECK(c.utility == std::vector<double>{0, -1, 3, 5.1 - 10});
    CHECK(c.argmax == 2);
    CHECK(utility_curve(B, R, 0.0).argmax == 3);
    CHECK(utility_curve(B, R, 1e6).argmax == 0);
    CHECK_THROWS(utility_curve(B, R, -1.0));
  }

  TEST_CASE("group recovery probability") {
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const auto params = uniform_policy(6, 4);
    const ReferenceTrajectory ref{chain.canonical};
    for (int k : {0, 3, 6}) {
      const auto g = level(ref, k);
      const double p = exact_success(chain.spec, step_distributions(params, g.context));
      const auto q = estimate_q(chain.spec, params, g, 4, 0.5, 3000, 10 + k);
      CHECK(q.trial_count == 3000);
      CHECK(q.q_exact == doctest::Approx(1 - std::pow(1 - p, 4)).epsilon(1e-12));
      CHECK(std::abs(q.q_hat - q.q_exact) <= 4 * std::sqrt(q.q_exact * (1 - q.q_exact) / 3000) + 1e-12);
    }
  }

  TEST_CASE("risk-constrained selection") {
    const std::vector<double> Q{0.1, 0.4, 0.8, 0.95}, R{0, 1, 2, 3};
    CHECK(select_risk_constrained(Q, R, 0.7) == 2);
    CHECK_FALSE(select_risk_constrained(Q, R, 0.99).has_value());
  }

  TEST_CASE("the minimal feasible level minimises a monotone risk") {
    Rng rng(8);
    for (int rep = 0; rep < 500; ++rep) {
      const int K = 1 + uniform_index(rng, 12);
      std::vector<double> Q, R;
      double q = 0.0, r = 0.0;
      for (int k = 0; k <= K; ++k) {
        q = std::min(1.0, q + uniform01(rng) * 0.3);
        r += uniform01(rng);
        Q.push_back(q);
        R.push_back(r);
      }
      const double rho = uniform01(rng);
      const auto pick = select_risk_constrained(Q, R, rho);
      std::optional<double> best;
      for (int k = 0; k <= K; ++k)
        if (Q[static_cast<std::size_t>(k)] >= rho && (!best || R[static_cast<std::size_t>(k)] < *best))
          best = R[static_cast<std::size_t>(k)];
      REQUIRE(pick.has_value() == best.has_value());
      if (pick) CHECK(R[static_cast<std::size_t>(*pick)] == *best);
    }
  }

  TEST_CASE("hoeffding budget") {
    CHECK(hoeffding_budget(0.1, 8, 0.05) == 295);
    CHECK(hoeffding_budget(0.5, 1, 0.5) == 5);
    const int m = hoeffding_budget(0.1, 8, 0.05), m2 = hoeffding_budget(0.05, 8, 0.05);
    CHECK((m2 <= 4 * m && m2 > 4 * (m - 1)));
    CHECK_THROWS(hoeffding_budget(0.0, 8, 0.05));
    CHECK_THROWS(hoeffding_budget(0.1, 8, 1.0));
  }

  TEST_CASE("trainable fraction") {
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const auto params = uniform_policy(6, 4);
    const std::vector<RolloutGroup> groups{sample_group(chain.spec, params, std::nullopt, 8, 1),
                                           sample_group(chain.spec, params, level(ReferenceTrajectory{chain.canonical}, 6), 64, 2)};
    // The first group is almost surely all-fail, the large guided one is mixed.
    const double expect = (groups[0].rewards() == std::vector<double>(8, 0.0) ? 0.0 : 0.5) + 0.5;
    CHECK(trainable_fraction(groups) == doctest::Approx(expect));
  }

  TEST_CASE("selection study layout") {
    const auto chain = make_barrier_chain(6, 4, 2, {{2, 2}});
    const auto params = uniform_policy(6, 4);
    const auto s = selection_study(chain.spec, params, ReferenceTrajectory{chain.canonical}, 6, 8, 0.5, 0.8, 0.1, 0.05,
                                   50, 3, 100);
    CHECK(s.q_hat.size() == 7);
    CHECK(s.r_hat.size() == 7);
    for (double q : s.q_hat) CHECK((q >= 0.0 && q <= 1.0));
    CHECK(s.budget_m == hoeffding_budget(0.1, 6, 0.05));
    if (s.k_rho_star) CHECK(s.q_hat[static_cast<std::size_t>(*s.k_rho_star)] >= 0.8);
  }

  TEST_CASE("barrier profile rows") {
    const auto params = uniform_policy(12, 8);
    const auto rows = barrier_profile(hard_chain().spec, params, level(hard_ref(), 12), 8, 100, 4);
    REQUIRE(rows.size() == 13);
    CHECK(rows[0].mass == 1.0);
    CHECK(*rows[4].retention == doctest::Approx(0.125));
    CHECK(rows[12].delta_logit == 0.0);
    CHECK(rows[0].delta_logit == 4.0);
    for (std::size_t t = 1; t < rows.size(); ++t)
      if (rows[t].alive) CHECK(rows[t].pass_at_k >= rows[t - 1].pass_at_k - 1e-12);
  }
}
