#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "stuq/rng.hpp"

using namespace stuq;

TEST_CASE("identical seeds give identical streams", "[rng]") {
  Rng a(42), b(42);
  for (int i = 0; i < 200; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(42), d(42);
  for (int i = 0; i < 200; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("different seeds diverge", "[rng]") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i)
    if (a.uniform() == b.uniform()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform range and moments", "[rng]") {
  Rng r(7);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / 20000.0 - 0.5) < 0.01);

  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform(-2.0, 3.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo >= -2.0);
  CHECK(hi < 3.0);
  CHECK(lo < -1.5);
  CHECK(hi > 2.5);
}

TEST_CASE("normal moments", "[rng]") {
  Rng r(99);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("bernoulli edge probabilities", "[rng]") {
  Rng r(5);
  for (int i = 0; i < 100; ++i) CHECK_FALSE(r.bernoulli(0.0));
  for (int i = 0; i < 100; ++i) CHECK(r.bernoulli(1.0));
  int hits = 0;
  for (int i = 0; i < 10000; ++i)
    if (r.bernoulli(0.3)) ++hits;
  CHECK(hits > 2700);
  CHECK(hits < 3300);
}

TEST_CASE("below covers range without bias", "[rng]") {
  Rng r(11);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = r.below(10);
    REQUIRE(v < 10);
    seen.insert(v);
  }
  CHECK(seen.size() == 10);
}

TEST_CASE("derived seeds are distinct and stable", "[rng]") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(derive_seed(42, i));
  CHECK(seeds.size() == 1000);
  CHECK(derive_seed(42, 7) == derive_seed(42, 7));
  CHECK(derive_seed(42, 7) != derive_seed(43, 7));
}
