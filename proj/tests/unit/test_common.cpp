#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "guidelab/common.hpp"

using namespace guidelab;

TEST_SUITE("common") {
  TEST_CASE("softmax normalises and survives huge logits") {
    const std::vector<double> logits{1000.0, 1000.0, -1000.0};
    std::vector<double> p(3), lp(3);
    softmax(logits, p);
    log_softmax(logits, lp);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));
    CHECK(p[2] == 0.0);
    CHECK(lp[0] == doctest::Approx(std::log(0.5)));
    CHECK(std::isfinite(lp[2]));
  }

  TEST_CASE("log_softmax matches log of softmax") {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> logits(5);
      for (auto& v : logits) v = 10.0 * (uniform01(rng) - 0.5);
      std::vector<double> p(5), lp(5);
      softmax(logits, p);
      log_softmax(logits, lp);
      double total = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(std::abs(std::log(p[i]) - lp[i]) < 1e-12);
        total += p[i];
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("uniform_index stays in range and hits every value") {
    Rng rng(2);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
      const int v = uniform_index(rng, 7);
      REQUIRE(v >= 0);
      REQUIRE(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
  }

  TEST_CASE("uniform01 is in [0, 1)") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
      const double u = uniform01(rng);
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
    }
  }

  TEST_CASE("derived streams depend on every id and on their order") {
    const auto a = derive_stream(7, {1, 2});
    CHECK(a == derive_stream(7, {1, 2}));
    CHECK(a != derive_stream(7, {2, 1}));
    CHECK(a != derive_stream(8, {1, 2}));
    CHECK(a != derive_stream(7, {1, 3}));
    CHECK(derive_stream(7, {}) != derive_stream(7, {0}));
  }

  TEST_CASE("format_double round-trips") {
    Rng rng(4);
    for (int i = 0; i < 1000; ++i) {
      const double v = (uniform01(rng) - 0.5) * std::pow(10.0, uniform_index(rng, 40) - 20);
      CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  }

  TEST_CASE("fnv1a64 known values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }

  TEST_CASE("Table shape and access") {
    Table t(2, 3, 1.5);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    t(1, 2) = 4.0;
    CHECK(t.row(1)[2] == 4.0);
    CHECK(t.data()[5] == 4.0);
    CHECK(t.same_shape(Table(2, 3)));
    CHECK_FALSE(t.same_shape(Table(3, 2)));
    CHECK_THROWS_AS(Table(-1, 2), std::invalid_argument);
  }

  TEST_CASE("l2_norm and all_finite") {
    const std::vector<double> v{3.0, 4.0};
    CHECK(l2_norm(v) == doctest::Approx(5.0));
    CHECK(all_finite(v));
    const std::vector<double> w{1.0, std::numeric_limits<double>::infinity()};
    CHECK_FALSE(all_finite(w));
  }
}
