#include <doctest.h>

#include <cmath>
#include <set>

#include "guidelab/guidance.hpp"

using namespace guidelab;

namespace {

bool is_subsequence(const std::vector<Action>& small, const std::vector<Action>& big) {
  std::size_t i = 0;
  for (Action a : big)
    if (i < small.size() && small[i] == a) ++i;
  return i == small.size();
}

}  // namespace

TEST_SUITE("guidance") {
  TEST_CASE("levels are prefixes") {
    const ReferenceTrajectory ref{{3, 1, 4, 1, 5}};
    CHECK(level(ref, 0).context.empty());
    CHECK(level(ref, 3).context.plan() == std::vector<Action>{3, 1, 4});
    CHECK(level(ref, 5).context.plan() == ref.actions);
    CHECK(level(ref, 2).k == 2);
    CHECK_THROWS(level(ref, 6));
    CHECK_THROWS(level(ref, -1));
  }

  TEST_CASE("noise injection keeps the plan as a subsequence") {
    Rng rng(1);
    for (int rep = 0; rep < 200; ++rep) {
      ReferenceTrajectory ref;
      const int len = 1 + uniform_index(rng, 20);
      for (int i = 0; i < len; ++i) ref.actions.push_back(uniform_index(rng, 6));
      const double ratio = (rep % 10) / 10.0;
      const auto noised = inject_noise(ref, ratio, 6, rng);
      CHECK(noised.length() == len + static_cast<int>(std::ceil(ratio * len)));
      CHECK(is_subsequence(ref.actions, noised.actions));
      for (Action a : noised.actions) CHECK((a >= 0 && a < 6));
    }
  }

  TEST_CASE("noise injection edge cases") {
    const ReferenceTrajectory ref{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
    Rng rng(2);
    const auto same = inject_noise(ref, 0.0, 10, rng);
    CHECK(same == ref);
    CHECK_FALSE(same.noised);
    const auto noisy = inject_noise(ref, 0.1, 10, rng);
    CHECK(noisy.length() == 11);
    CHECK(noisy.noised);
    CHECK_THROWS(inject_noise(ref, 1.0, 10, rng));
    Rng a(5), b(5);
    CHECK(inject_noise(ref, 0.3, 10, a) == inject_noise(ref, 0.3, 10, b));
  }

  TEST_CASE("default budget") {
    CHECK(default_search_budget(0) == 2);
    CHECK(default_search_budget(1) == 2);
    CHECK(default_search_budget(2) == 3);
    CHECK(default_search_budget(8) == 5);
    CHECK(default_search_budget(12) == 6);
    CHECK(default_search_budget(16) == 6);
  }

  TEST_CASE("binary search finds the threshold of every monotone oracle") {
    for (int K = 1; K <= 40; ++K) {
      for (int threshold = 1; threshold <= K + 1; ++threshold) {  // K + 1: never succeeds
        std::set<int> seen;
        bool repeated = false;
        const auto r = find_min_level(
            [&](int k) {
              repeated = repeated || !seen.insert(k).second;
              return k >= threshold;
            },
            K, default_search_budget(K));
        CHECK_FALSE(repeated);
        if (threshold <= K) {
          REQUIRE(r.k_star.has_value());
          CHECK(*r.k_star == threshold);
        } else {
          CHECK_FALSE(r.k_star.has_value());
        }
        CHECK(r.budget_used == static_cast<int>(r.evaluated_levels.size()));
        CHECK(r.budget_used <= default_search_budget(K));
      }
    }
  }

  TEST_CASE("search returns a level that succeeded, even for a non-monotone oracle") {
    Rng rng(3);
    for (int rep = 0; rep < 500; ++rep) {
      const int K = 1 + uniform_index(rng, 16);
      std::vector<bool> table;
      for (int k = 0; k <= K; ++k) table.push_back(uniform01(rng) < 0.4);
      const auto r = find_min_level([&](int k) { return bool(table[static_cast<std::size_t>(k)]); }, K,
                                    default_search_budget(K));
      if (r.k_star) {
        CHECK(table[static_cast<std::size_t>(*r.k_star)]);
        CHECK(r.evaluations.at(*r.k_star));
      }
      for (const auto& [k, ok] : r.evaluations) CHECK(ok == table[static_cast<std::size_t>(k)]);
    }
  }

  TEST_CASE("search stops at the budget") {
    int calls = 0;
    const auto r = find_min_level([&](int) { return ++calls, false; }, 64, 2);
    CHECK(calls == 2);
    CHECK(r.budget_used == 2);
    CHECK_FALSE(r.k_star.has_value());
    CHECK_THROWS(find_min_level([](int) { return true; }, 4, 0));
  }

  TEST_CASE("fallback trigger") {
    CHECK(fallback_trigger(std::vector<double>{0, 0, 0, 0}, 0.5));
    CHECK_FALSE(fallback_trigger(std::vector<double>{0, 0, 1, 0}, 0.5));
    CHECK(fallback_trigger(std::vector<double>{0.4}, 0.5));
    CHECK_THROWS(fallback_trigger(std::vector<double>{}, 0.5));
  }

  TEST_CASE("selection trace record") {
    const auto r = find_min_level([](int k) { return k >= 3; }, 8, default_search_budget(8));
    const auto rec = selection_trace(7, r);
    CHECK(rec.at("task_id") == 7);
    CHECK(rec.at("k_star") == 3);
    CHECK(rec.at("budget_used") == r.budget_used);
    CHECK(rec.at("evaluated_levels").size() == rec.at("outcomes").size());
    CHECK(rec.at("evaluated_levels")[0] == 4);
    CHECK(rec.at("outcomes")[0] == true);
    const auto none = selection_trace(1, find_min_level([](int) { return false; }, 4, 3));
    CHECK(none.at("k_star").is_null());
  }
}
