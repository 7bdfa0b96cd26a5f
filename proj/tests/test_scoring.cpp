#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "stuq/rng.hpp"
#include "stuq/scoring.hpp"

using namespace stuq;

namespace {

// adaptive Simpson quadrature, used as the independent integral oracle
double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fm, double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double eps) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, eps, 40);
}

// Q evaluated straight from the hinge formula, with no (0,1) precondition so
// the quadrature can touch the endpoints
double q_formula(const SplineShape& s, double alpha) {
  double q = s.intercept;
  for (std::size_t j = 0; j < s.knots.size(); ++j)
    q += s.slopes[j] * std::max(0.0, alpha - s.knots[j]);
  return q;
}

double crps_by_quadrature(const SplineShape& s, double y) {
  const auto f = [&](double a) {
    const double e = y - q_formula(s, a);
    const double pin = e >= 0.0 ? a * e : (a - 1.0) * e;
    return 2.0 * pin;
  };
  // split the integral at every kink (the knots, plus the crossing of Q and
  // y, located independently by bisection) so each piece is smooth
  std::vector<double> pts{0.0, 1.0};
  for (double k : s.knots)
    if (k > 0.0 && k < 1.0) pts.push_back(k);
  if (q_formula(s, 0.0) < y && q_formula(s, 1.0) > y) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (q_formula(s, mid) < y ? lo : hi) = mid;
    }
    pts.push_back(0.5 * (lo + hi));
  }
  std::sort(pts.begin(), pts.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (pts[i + 1] > pts[i]) acc += integrate(f, pts[i], pts[i + 1], 1e-12);
  return acc;
}

SplineShape uniform_shape() {
  SplineShape s;
  s.intercept = 0.0;
  s.slopes = {1.0, 0.0, 0.0, 0.0, 0.0};
  s.knots = {0.0, 0.2, 0.4, 0.6, 0.8};
  return s;
}

}  // namespace

TEST_CASE("pinball loss hand values", "[scoring]") {
  CHECK(pinball_loss(3.0, 3.0, 0.5) == 0.0);
  CHECK(pinball_loss(1.0, 0.0, 0.975) == Catch::Approx(0.975).margin(1e-15));
  CHECK(pinball_loss(0.0, 1.0, 0.975) == Catch::Approx(0.025).margin(1e-15));
  CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 0.0), ValidationError);
  CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 1.0), ValidationError);
}

TEST_CASE("pinball loss is nonnegative, zero only at equality", "[scoring]") {
  Rng rng(61);
  for (int i = 0; i < 500; ++i) {
    const double y = rng.normal(0, 3), f = rng.normal(0, 3), r = rng.uniform(0.01, 0.99);
    const double p = pinball_loss(y, f, r);
    CHECK(p >= 0.0);
    if (y != f) CHECK(p > 0.0);
  }
}

TEST_CASE("constant predictor minimizing pinball is the empirical quantile", "[scoring]") {
  Rng rng(62);
  for (int rep = 0; rep < 20; ++rep) {
    const int N = 10 + static_cast<int>(rng.below(190));
    std::vector<double> z(static_cast<std::size_t>(N));
    for (auto& v : z) v = rng.normal(0, 2);
    double alpha = rng.uniform(0.05, 0.95);
    // keep alpha*N away from integers so the minimizer is unique
    if (std::fabs(alpha * N - std::round(alpha * N)) < 0.05)
      alpha += 0.5 / static_cast<double>(N);

    std::vector<double> sorted = z;
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::ceil(alpha * N));  // 1-indexed
    const double oracle = sorted[idx - 1];

    const auto mean_pinball = [&](double f) {
      double acc = 0.0;
      for (double y : z) acc += pinball_loss(y, f, alpha);
      return acc / static_cast<double>(N);
    };
    double best_val = 1e300, best_f = 0.0;
    for (double f : sorted)
      if (mean_pinball(f) < best_val) {
        best_val = mean_pinball(f);
        best_f = f;
      }
    CHECK(best_f == oracle);
  }
}

TEST_CASE("interval score hand values", "[scoring]") {
  // width 2 plus penalties 10 and 20 for the two excursions
  CHECK(mis_metric(1.0, -1.0, {0.0, 2.0, -3.0}, 0.2) == Catch::Approx(12.0).margin(1e-12));

  SECTION("all observations inside the bounds leave only the width") {
    CHECK(mis_metric(2.5, 0.5, {1.0, 2.0, 0.5}, 0.1) == 2.0);
  }
  SECTION("degenerate zero-width interval on its own observation") {
    CHECK(mis_metric(1.0, 1.0, {1.0}, 0.3) == 0.0);
  }
  SECTION("length mismatch is rejected") {
    CHECK_THROWS_AS(mis_metric({1.0}, {0.0, 0.0}, {0.5, 0.5}, 0.2), ValidationError);
  }
}

TEST_CASE("interval score equivariance", "[scoring]") {
  Rng rng(63);
  for (int rep = 0; rep < 50; ++rep) {
    const double u = rng.uniform(0, 3), l = u - rng.uniform(0.1, 2.0);
    std::vector<double> z(7);
    for (auto& v : z) v = rng.normal(0, 2);
    const double rho = rng.uniform(0.05, 0.5);
    const double base = mis_metric(u, l, z, rho);

    const double c = rng.normal(0, 5);
    std::vector<double> shifted = z;
    for (auto& v : shifted) v += c;
    CHECK(mis_metric(u + c, l + c, shifted, rho) == Catch::Approx(base).margin(1e-10));

    const double s = rng.uniform(0.5, 3.0);
    std::vector<double> scaled = z;
    for (auto& v : scaled) v *= s;
    CHECK(mis_metric(u * s, l * s, scaled, rho) == Catch::Approx(base * s).margin(1e-10));
  }
}

TEST_CASE("interval training loss hand values", "[scoring]") {
  CHECK(mis_training_term(2.0, 1.0, -1.0, 0.0, 0.05) == Catch::Approx(44.0).margin(1e-12));
  CHECK(mis_training_term(0.5, 1.0, -1.0, 0.5, 0.05) == 2.0);  // inside, f exact
  CHECK(mis_training_term(1.0, 1.0, 1.0, 1.0, 0.2) == 0.0);
  CHECK(mis_training_loss({2.0, 0.5}, {1.0, 1.0}, {-1.0, -1.0}, {0.0, 0.5}, 0.05) ==
        Catch::Approx(23.0).margin(1e-12));
  CHECK_THROWS_AS(mis_training_loss({1.0}, {1.0, 2.0}, {0.0}, {0.0}, 0.1), ValidationError);
}

TEST_CASE("empirical interval order statistics", "[scoring]") {
  SECTION("1..100 at rho 0.05 picks the 3rd and 98th order statistics") {
    std::vector<double> z(100);
    for (int i = 0; i < 100; ++i) z[static_cast<std::size_t>(i)] = i + 1.0;
    IntervalSpec iv = empirical_interval(z, 0.05);
    CHECK(iv.lower == 3.0);
    CHECK(iv.upper == 98.0);
  }
  SECTION("two samples at rho 0.5 span the pair") {
    IntervalSpec iv = empirical_interval({7.0, 3.0}, 0.5);
    CHECK(iv.lower == 3.0);
    CHECK(iv.upper == 7.0);
  }
  SECTION("exact-integer rho*N/2 keeps the closed-form indices") {
    std::vector<double> z(100);
    for (int i = 0; i < 100; ++i) z[static_cast<std::size_t>(i)] = i + 1.0;
    IntervalSpec iv = empirical_interval(z, 0.2);  // rho*N/2 = 10 exactly
    CHECK(iv.lower == 10.0);
    CHECK(iv.upper == 90.0);
  }
  SECTION("all-equal samples collapse the interval") {
    IntervalSpec iv = empirical_interval({4.0, 4.0, 4.0}, 0.1);
    CHECK(iv.lower == 4.0);
    CHECK(iv.upper == 4.0);
  }
  SECTION("rejects tiny batches") {
    CHECK_THROWS_AS(empirical_interval({1.0}, 0.1), ValidationError);
  }
}

TEST_CASE("brute force minimizer basics", "[scoring]") {
  SECTION("two samples") {
    IntervalSpec iv = brute_force_mis_minimizer({7.0, 3.0}, 0.5);
    CHECK(iv.lower == 3.0);
    CHECK(iv.upper == 7.0);
  }
  SECTION("all-equal samples give zero width") {
    IntervalSpec iv = brute_force_mis_minimizer({2.0, 2.0, 2.0, 2.0}, 0.2);
    CHECK(iv.lower == 2.0);
    CHECK(iv.upper == 2.0);
  }
}

TEST_CASE("brute force matches the closed form on random batches", "[scoring]") {
  Rng rng(64);
  for (int family = 0; family < 3; ++family)
    for (int N : {5, 25, 100})
      for (double rho : {0.05, 0.2, 0.5})
        for (int rep = 0; rep < 3; ++rep) {
          std::vector<double> z(static_cast<std::size_t>(N));
          for (auto& v : z) {
            if (family == 0) v = rng.normal(0, 1.5);
            else if (family == 1) v = rng.uniform(-4, 4);
            else v = std::exp(rng.normal(0, 0.8));
          }
          IntervalSpec closed = empirical_interval(z, rho);
          IntervalSpec brute = brute_force_mis_minimizer(z, rho);
          REQUIRE(brute.lower == closed.lower);
          REQUIRE(brute.upper == closed.upper);
        }
}

TEST_CASE("spline quantile evaluation", "[scoring]") {
  SECTION("vanishing slopes give a constant quantile function") {
    SplineQuantileParams p;
    p.intercept = 2.5;
    p.raw_slopes.fill(-200.0);
    p.raw_knots.fill(0.0);
    for (double a : {0.01, 0.3, 0.7, 0.99})
      CHECK(spline_quantile_eval(p, a) == Catch::Approx(2.5).margin(1e-12));
  }

  SECTION("single hinge after knot 0.5") {
    SplineShape s;
    s.intercept = 1.0;
    s.slopes = {3.0};
    s.knots = {0.5};
    CHECK(spline_quantile_eval(s, 0.75) - spline_quantile_eval(s, 0.5) ==
          Catch::Approx(0.25 * 3.0));
  }

  SECTION("monotone for random raw parameters") {
    Rng rng(65);
    for (int rep = 0; rep < 1000; ++rep) {
      SplineQuantileParams p;
      p.intercept = rng.normal(0, 2);
      for (auto& v : p.raw_slopes) v = rng.normal(0, 2);
      for (auto& v : p.raw_knots) v = rng.normal(0, 2);
      const double a1 = rng.uniform(0.001, 0.998);
      const double a2 = rng.uniform(a1, 0.999);
      CHECK(spline_quantile_eval(p, a2) >= spline_quantile_eval(p, a1) - 1e-12);
    }
  }

  SECTION("transformed knots are strictly increasing inside (0,1)") {
    Rng rng(66);
    for (int rep = 0; rep < 200; ++rep) {
      SplineQuantileParams p;
      for (auto& v : p.raw_knots) v = rng.normal(0, 3);
      SplineShape s = p.shape();
      double prev = 0.0;
      for (double k : s.knots) {
        CHECK(k > prev);
        CHECK(k < 1.0);
        prev = k;
      }
    }
  }
}

TEST_CASE("closed-form CRPS", "[scoring]") {
  SECTION("point mass at the observation scores zero") {
    SplineShape s;
    s.intercept = 1.7;
    s.slopes = {0.0, 0.0};
    s.knots = {0.3, 0.6};
    CHECK(crps_pwl(s, 1.7) == 0.0);
  }

  SECTION("uniform predictive, observation at the median") {
    CHECK(crps_pwl(uniform_shape(), 0.5) == Catch::Approx(1.0 / 12.0).margin(1e-9));
  }

  SECTION("matches adaptive quadrature on random cases") {
    Rng rng(67);
    for (int rep = 0; rep < 100; ++rep) {
      SplineQuantileParams p;
      p.intercept = rng.normal(0, 1);
      for (auto& v : p.raw_slopes) v = rng.normal(0, 1.5);
      for (auto& v : p.raw_knots) v = rng.normal(0, 1.5);
      SplineShape s = p.shape();
      const double y = rng.normal(0, 2);
      const double closed = crps_pwl(s, y);
      const double quad = crps_by_quadrature(s, y);
      CHECK(closed >= 0.0);
      CHECK(std::fabs(closed - quad) < 1e-6);
    }
  }

  SECTION("observation outside the quantile range still scores finitely") {
    SplineShape s = uniform_shape();
    CHECK(std::isfinite(crps_pwl(s, 10.0)));
    CHECK(std::isfinite(crps_pwl(s, -10.0)));
    CHECK(crps_pwl(s, 10.0) > crps_pwl(s, 0.5));
  }
}

TEST_CASE("tape CRPS agrees with the plain closed form", "[scoring]") {
  Rng rng(68);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> raw(SplineQuantileParams::kParamCount);
    for (auto& v : raw) v = rng.normal(0, 1.2);
    const double y = rng.normal(0, 2);

    Tape t;
    Tensor rt(Shape{SplineQuantileParams::kParamCount});
    rt.data = raw;
    Value rv = t.param(rt);
    SplineValues sv = transform_spline_params(t, rv);
    Value node = crps_pwl_node(t, sv, y);

    const double plain = crps_pwl(SplineQuantileParams::from_flat(raw), y);
    CHECK(t.value(node)[0] == Catch::Approx(plain).margin(1e-10));
  }
}

TEST_CASE("tape CRPS gradients pass finite differences", "[scoring]") {
  Rng rng(69);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> raw(SplineQuantileParams::kParamCount);
    for (auto& v : raw) v = rng.normal(0, 1.0);
    const double y = rng.normal(0, 1.5);

    Tape t;
    Tensor rt(Shape{SplineQuantileParams::kParamCount});
    rt.data = raw;
    Value rv = t.param(rt);
    Value node = crps_pwl_node(t, transform_spline_params(t, rv), y);
    CHECK(finite_difference_check(t, node, {rv}, 1e-6) < 1e-5);
  }
}

TEST_CASE("summary metrics", "[scoring]") {
  const Shape sh{4};
  Tensor truth(sh), point(sh), lower(sh), upper(sh);
  truth.data = {1.0, 2.0, 3.0, 4.0};

  SECTION("perfect forecast with degenerate intervals") {
    point.data = truth.data;
    lower.data = truth.data;
    upper.data = truth.data;
    MetricSummary m = summary_metrics(point, lower, upper, truth, nullptr, 0.2);
    CHECK(m.mae == 0.0);
    CHECK(m.rmse == 0.0);
    CHECK(m.mis == 0.0);
    CHECK(m.interval_width == 0.0);
    CHECK(m.coverage == 1.0);
    CHECK(m.crossing_rate == 0.0);
  }

  SECTION("constant bias with wide intervals") {
    for (std::int64_t i = 0; i < 4; ++i) {
      point[i] = truth[i] + 0.5;
      lower[i] = truth[i] - 1.0;
      upper[i] = truth[i] + 1.0;
    }
    MetricSummary m = summary_metrics(point, lower, upper, truth, nullptr, 0.2);
    CHECK(m.mae == Catch::Approx(0.5));
    CHECK(m.rmse == Catch::Approx(0.5));
    CHECK(m.coverage == 1.0);
    CHECK(m.interval_width == Catch::Approx(2.0));
    CHECK(m.mis == Catch::Approx(2.0));  // no excursions: width only
  }

  SECTION("the mis field equals mis_metric on identical inputs") {
    Rng rng(70);
    for (std::int64_t i = 0; i < 4; ++i) {
      point[i] = rng.normal(0, 1);
      lower[i] = rng.normal(-2, 0.5);
      upper[i] = lower[i] + rng.uniform(0.1, 2.0);
    }
    MetricSummary m = summary_metrics(point, lower, upper, truth, nullptr, 0.1);
    CHECK(m.mis == mis_metric(std::vector<double>(upper.data), std::vector<double>(lower.data),
                              std::vector<double>(truth.data), 0.1));
  }

  SECTION("mask excludes entries") {
    point.data = {1.0, 100.0, 3.0, 4.0};
    lower.data = {0.0, 0.0, 2.0, 3.0};
    upper.data = {2.0, 0.0, 4.0, 5.0};
    Tensor mask(sh);
    mask.data = {1.0, 0.0, 1.0, 1.0};
    MetricSummary m = summary_metrics(point, lower, upper, truth, &mask, 0.2);
    CHECK(m.mae == 0.0);
    CHECK(m.coverage == 1.0);

    Tensor none(sh);
    none.fill(0.0);
    CHECK_THROWS_AS(summary_metrics(point, lower, upper, truth, &none, 0.2), ValidationError);
  }

  SECTION("crossing is reported, clamp is opt-in") {
    point.data = {1.0, 2.0, 3.0, 4.0};
    lower.data = {1.5, 1.5, 2.5, 3.5};
    upper.data = {0.5, 2.5, 3.5, 4.5};  // first interval crossed
    MetricSummary raw = summary_metrics(point, lower, upper, truth, nullptr, 0.2);
    CHECK(raw.crossing_rate == Catch::Approx(0.25));
    MetricSummary fixed = summary_metrics(point, lower, upper, truth, nullptr, 0.2, true);
    CHECK(fixed.crossing_rate == Catch::Approx(0.25));
    CHECK(fixed.interval_width > raw.interval_width);
    CHECK(fixed.coverage >= raw.coverage);
  }
}
