#pragma once

// Losses and evaluation metrics for probabilistic forecasts: pinball loss,
// mean interval score (MIS) in training-loss and metric form, order-statistic
// interval extraction with its brute-force minimizer oracle, monotone
// piecewise-linear spline quantile functions with closed-form CRPS, and the
// masked summary-metric bundle.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "stuq/autodiff.hpp"
#include "stuq/common.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

// ------------------------------------------------------------ interval score

struct IntervalSpec {
  double rho = 0.0;   // miscoverage level in (0,1)
  double lower = 0.0;
  double upper = 0.0;

  void validate() const {
    require(rho > 0.0 && rho < 1.0, "interval: rho must lie in (0,1)");
    require(upper >= lower, "interval: upper must be >= lower");
  }
};

inline void check_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0))  // message built only on failure; this sits in hot loops
    throw ValidationError("rho must lie in (0,1), got " + std::to_string(rho));
}

// (y - f) * (rho - 1{y < f}); zero iff y == f.
inline double pinball_loss(double y, double f, double rho) {
  check_rho(rho);
  const double ind = y < f ? 1.0 : 0.0;
  return (y - f) * (rho - ind);
}

// One interval-score term: width plus out-of-bounds penalties scaled by 2/rho.
inline double mis_score(double u, double l, double z, double rho) {
  check_rho(rho);
  double s = u - l;
  if (z > u) s += (2.0 / rho) * (z - u);
  if (z < l) s += (2.0 / rho) * (l - z);
  return s;
}

// One fixed interval scored against a batch of observations.
inline double mis_metric(double u, double l, const std::vector<double>& obs, double rho) {
  require(!obs.empty(), "mis_metric: no observations");
  double acc = 0.0;
  for (double z : obs) acc += mis_score(u, l, z, rho);
  return acc / static_cast<double>(obs.size());
}

// Per-instance bounds scored against per-instance observations.
inline double mis_metric(const std::vector<double>& us, const std::vector<double>& ls,
                         const std::vector<double>& obs, double rho) {
  require(us.size() == ls.size() && us.size() == obs.size(),
          "mis_metric: bounds and observations must have equal length");
  require(!obs.empty(), "mis_metric: no observations");
  double acc = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) acc += mis_score(us[i], ls[i], obs[i], rho);
  return acc / static_cast<double>(obs.size());
}

// Interval score plus an absolute-error anchor for the point head.
inline double mis_training_term(double y, double u, double l, double f, double rho,
                                double point_weight = 1.0) {
  return mis_score(u, l, y, rho) + point_weight * std::fabs(y - f);
}

inline double mis_training_loss(const std::vector<double>& ys, const std::vector<double>& us,
                                const std::vector<double>& ls, const std::vector<double>& fs,
                                double rho, double point_weight = 1.0) {
  require(ys.size() == us.size() && ys.size() == ls.size() && ys.size() == fs.size(),
          "mis_training_loss: length mismatch");
  require(!ys.empty(), "mis_training_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i)
    acc += mis_training_term(ys[i], us[i], ls[i], fs[i], rho, point_weight);
  return acc / static_cast<double>(ys.size());
}

// rho*N/2 computed in floating point can miss an exact integer by one ulp,
// which would flip the ceil/floor below; snap when within a relative 1e-9.
inline double snap_near_integer(double x) {
  const double r = std::round(x);
  return std::fabs(x - r) <= 1e-9 * std::max(1.0, std::fabs(x)) ? r : x;
}

// Closed-form MIS minimizer over the empirical distribution: with samples
// sorted ascending and 1-indexed, l = z_{ceil(rho*N/2)}, u = z_{N-floor(rho*N/2)}.
inline IntervalSpec empirical_interval(std::vector<double> samples, double rho) {
  check_rho(rho);
  const std::int64_t N = static_cast<std::int64_t>(samples.size());
  require(N >= 2, "empirical_interval: need at least 2 samples, got " + std::to_string(N));
  for (double z : samples) require(std::isfinite(z), "empirical_interval: samples must be finite");
  std::sort(samples.begin(), samples.end());
  const double half = snap_near_integer(rho * static_cast<double>(N) / 2.0);
  const std::int64_t lo_idx = static_cast<std::int64_t>(std::ceil(half));    // 1-indexed
  const std::int64_t hi_idx = N - static_cast<std::int64_t>(std::floor(half));
  IntervalSpec out{rho, samples[static_cast<std::size_t>(lo_idx - 1)],
                   samples[static_cast<std::size_t>(hi_idx - 1)]};
  out.validate();
  return out;
}

// Exhaustive MIS minimization over all pairs of sample order statistics
// (plus infinite guards, which can never win on finite data). Score ties are
// detected under a small relative tolerance and broken toward the lower
// upper bound, then the lower lower bound, which is exactly the selection the
// closed form above makes on tie plateaus.
inline IntervalSpec brute_force_mis_minimizer(std::vector<double> samples, double rho) {
  check_rho(rho);
  require(samples.size() >= 2, "brute_force_mis_minimizer: need at least 2 samples");
  std::sort(samples.begin(), samples.end());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lo_cand = samples, hi_cand = samples;
  lo_cand.push_back(-inf);
  hi_cand.push_back(inf);

  const auto score = [&](double u, double l) {
    if (!std::isfinite(u) || !std::isfinite(l)) return inf;
    return mis_metric(u, l, samples, rho);
  };

  bool have = false;
  double best = inf, best_u = inf, best_l = -inf;
  for (double l : lo_cand)
    for (double u : hi_cand) {
      if (u < l) continue;
      const double s = score(u, l);
      if (!std::isfinite(s)) continue;  // infinite guards never win on finite data
      if (!have) {
        have = true;
        best = s;
        best_u = u;
        best_l = l;
        continue;
      }
      const double tol = 1e-9 * std::max(1.0, std::fabs(s) + std::fabs(best));
      if (s < best - tol) {
        best = s;
        best_u = u;
        best_l = l;
      } else if (s <= best + tol) {
        if (u < best_u || (u == best_u && l < best_l)) {
          best_u = u;
          best_l = l;
        }
      }
    }
  require(have, "brute_force_mis_minimizer: no finite candidate interval");
  IntervalSpec out{rho, best_l, best_u};
  out.validate();
  return out;
}

// ------------------------------------------------- spline quantile functions

// Transformed spline: Q(alpha) = intercept + sum_j slopes[j] * max(0, alpha -
// knots[j]) with nonnegative slopes and nondecreasing knots in [0, 1).
struct SplineShape {
  double intercept = 0.0;
  std::vector<double> slopes;
  std::vector<double> knots;

  void validate() const {
    require(slopes.size() == knots.size(), "spline: slope/knot count mismatch");
    double prev = -1.0;
    for (std::size_t j = 0; j < knots.size(); ++j) {
      require(slopes[j] >= 0.0, "spline: slopes must be nonnegative");
      require(knots[j] >= 0.0 && knots[j] < 1.0, "spline: knots must lie in [0,1)");
      require(knots[j] >= prev, "spline: knots must be nondecreasing");
      prev = knots[j];
    }
  }
};

inline double stable_softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// Raw 11-parameter block: intercept, 5 raw slopes (softplus to nonnegative),
// 5 raw knots (softmax then midpoint-cumulative sum, giving strictly
// increasing knots inside (0,1)).
struct SplineQuantileParams {
  static constexpr int kKnots = 5;
  static constexpr int kParamCount = 11;

  double intercept = 0.0;
  std::array<double, kKnots> raw_slopes{};
  std::array<double, kKnots> raw_knots{};

  static SplineQuantileParams from_flat(const std::vector<double>& v) {
    require(v.size() == kParamCount, "spline params: expected 11 values, got " +
                                         std::to_string(v.size()));
    SplineQuantileParams p;
    p.intercept = v[0];
    for (int j = 0; j < kKnots; ++j) {
      p.raw_slopes[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(1 + j)];
      p.raw_knots[static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(6 + j)];
    }
    return p;
  }

  SplineShape shape() const {
    SplineShape s;
    s.intercept = intercept;
    s.slopes.resize(kKnots);
    s.knots.resize(kKnots);
    double mx = raw_knots[0];
    for (double k : raw_knots) mx = std::max(mx, k);
    double denom = 0.0;
    std::array<double, kKnots> e{};
    for (int j = 0; j < kKnots; ++j) {
      e[static_cast<std::size_t>(j)] = std::exp(raw_knots[static_cast<std::size_t>(j)] - mx);
      denom += e[static_cast<std::size_t>(j)];
    }
    double cum = 0.0;
    for (int j = 0; j < kKnots; ++j) {
      s.slopes[static_cast<std::size_t>(j)] =
          stable_softplus_value(raw_slopes[static_cast<std::size_t>(j)]);
      const double d = e[static_cast<std::size_t>(j)] / denom;
      s.knots[static_cast<std::size_t>(j)] = cum + 0.5 * d;
      cum += d;
    }
    return s;
  }
};

inline double spline_quantile_eval(const SplineShape& s, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "spline eval: alpha must lie in (0,1)");
  s.validate();
  double q = s.intercept;
  for (std::size_t j = 0; j < s.knots.size(); ++j)
    q += s.slopes[j] * std::max(0.0, alpha - s.knots[j]);
  return q;
}

inline double spline_quantile_eval(const SplineQuantileParams& p, double alpha) {
  return spline_quantile_eval(p.shape(), alpha);
}

namespace detail {

// Per-segment pieces of CRPS = 2 * int_0^1 pinball(y, Q(a), a) da with
// Q = A + B*a linear on the segment. below: segment left of the crossing
// (y >= Q); above: right of it.
inline double crps_seg_below(double y, double A, double B, double a, double b) {
  return (y - A) * (b * b - a * a) / 2.0 - B * (b * b * b - a * a * a) / 3.0;
}
inline double crps_seg_above(double y, double A, double B, double a, double b) {
  return (A - y) * ((b - a) - (b * b - a * a) / 2.0) +
         B * ((b * b - a * a) / 2.0 - (b * b * b - a * a * a) / 3.0);
}

}  // namespace detail

// Exact piecewise integration of the quantile-form CRPS for a monotone
// piecewise-linear Q.
inline double crps_pwl(const SplineShape& s, double y) {
  s.validate();
  require(std::isfinite(y), "crps: observation must be finite");
  const std::size_t m = s.knots.size();
  std::vector<double> ts;
  ts.reserve(m + 2);
  ts.push_back(0.0);
  for (double k : s.knots) ts.push_back(k);
  ts.push_back(1.0);

  // segment i spans [ts[i], ts[i+1]] and activates the first i hinges
  std::vector<double> A(m + 1), B(m + 1);
  A[0] = s.intercept;
  B[0] = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    A[j + 1] = A[j] - s.slopes[j] * s.knots[j];
    B[j + 1] = B[j] + s.slopes[j];
  }

  const auto q_at = [&](std::size_t seg, double a) { return A[seg] + B[seg] * a; };

  double alpha_star;
  std::size_t cross_seg = m + 1;  // sentinel: no interior crossing
  if (y < s.intercept) {
    alpha_star = 0.0;
  } else if (y >= q_at(m, 1.0)) {
    alpha_star = 1.0;
  } else {
    alpha_star = 0.0;
    for (std::size_t i = 0; i <= m; ++i) {
      if (q_at(i, ts[i + 1]) >= y) {
        cross_seg = i;
        alpha_star = B[i] > 0.0 ? (y - A[i]) / B[i] : ts[i];
        alpha_star = std::clamp(alpha_star, ts[i], ts[i + 1]);
        break;
      }
    }
  }

  double acc = 0.0;
  for (std::size_t i = 0; i <= m; ++i) {
    const double a = ts[i], b = ts[i + 1];
    if (b <= a) continue;
    if (i == cross_seg) {
      acc += detail::crps_seg_below(y, A[i], B[i], a, alpha_star);
      acc += detail::crps_seg_above(y, A[i], B[i], alpha_star, b);
    } else if (b <= alpha_star) {
      acc += detail::crps_seg_below(y, A[i], B[i], a, b);
    } else if (a >= alpha_star) {
      acc += detail::crps_seg_above(y, A[i], B[i], a, b);
    } else {
      acc += detail::crps_seg_below(y, A[i], B[i], a, alpha_star);
      acc += detail::crps_seg_above(y, A[i], B[i], alpha_star, b);
    }
  }
  return 2.0 * acc;
}

inline double crps_pwl(const SplineQuantileParams& p, double y) { return crps_pwl(p.shape(), y); }

// --------------------------------------------- spline quantiles on the tape

struct SplineValues {
  Value intercept;
  std::vector<Value> slopes;  // nonnegative, one per knot
  std::vector<Value> knots;   // strictly increasing in (0,1)
};

// Map a raw 11-vector node (intercept, 5 raw slopes, 5 raw knots) to
// transformed spline pieces, keeping everything differentiable.
inline SplineValues transform_spline_params(Tape& t, Value raw) {
  require(t.value(raw).numel() == SplineQuantileParams::kParamCount,
          "spline transform: expected an 11-element parameter vector, got " +
              t.value(raw).shape.str());
  constexpr int m = SplineQuantileParams::kKnots;
  SplineValues sv;
  sv.intercept = t.pick(raw, 0);
  Value slope_block = t.softplus(t.slice_last(raw, 1, m));
  for (int j = 0; j < m; ++j) sv.slopes.push_back(t.pick(slope_block, j));

  Value knot_raw = t.slice_last(raw, 6, m);
  double mx = t.value(knot_raw)[0];
  for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, t.value(knot_raw)[i]);
  Value e = t.exp_(t.add_const(knot_raw, -mx));  // uniform shift leaves softmax unchanged
  Value inv_sum = t.div(t.constant(1.0), t.sum_all(e));
  Value d = t.scale_by(e, inv_sum);

  Value cum = t.constant(0.0);
  for (int j = 0; j < m; ++j) {
    Value dj = t.pick(d, j);
    sv.knots.push_back(t.add(cum, t.scale(dj, 0.5)));
    cum = t.add(cum, dj);
  }
  return sv;
}

// Closed-form CRPS recorded as tape arithmetic. The segment/crossing layout
// is chosen from current values; the boundary and crossing locations stay on
// the tape, so their gradient contributions are exact.
inline Value crps_pwl_node(Tape& t, const SplineValues& sv, double y) {
  require(std::isfinite(y), "crps: observation must be finite");
  const std::size_t m = sv.knots.size();
  require(sv.slopes.size() == m, "crps: slope/knot count mismatch");

  std::vector<Value> bound(m + 2);
  bound[0] = t.constant(0.0);
  for (std::size_t j = 0; j < m; ++j) bound[j + 1] = sv.knots[j];
  bound[m + 1] = t.constant(1.0);

  std::vector<Value> A(m + 1), B(m + 1);
  A[0] = sv.intercept;
  B[0] = t.constant(0.0);
  for (std::size_t j = 0; j < m; ++j) {
    A[j + 1] = t.sub(A[j], t.mul(sv.slopes[j], sv.knots[j]));
    B[j + 1] = t.add(B[j], sv.slopes[j]);
  }

  const auto q_val = [&](std::size_t seg, double a) {
    return t.value(A[seg])[0] + t.value(B[seg])[0] * a;
  };
  const auto bval = [&](std::size_t i) { return t.value(bound[i])[0]; };

  Value alpha_star;
  std::size_t cross_seg = m + 1;
  if (y < t.value(sv.intercept)[0]) {
    alpha_star = t.constant(0.0);
  } else if (y >= q_val(m, 1.0)) {
    alpha_star = t.constant(1.0);
  } else {
    for (std::size_t i = 0; i <= m; ++i) {
      if (q_val(i, bval(i + 1)) >= y) {
        cross_seg = i;
        alpha_star = t.value(B[i])[0] > 0.0
                         ? t.div(t.sub(t.constant(y), A[i]), B[i])
                         : bound[i];
        break;
      }
    }
    require(alpha_star.valid(), "crps: crossing scan failed");
  }

  const double astar_val = t.value(alpha_star)[0];
  const auto sq = [&](Value x) { return t.mul(x, x); };
  const auto cube = [&](Value x) { return t.mul(t.mul(x, x), x); };
  // below the crossing: (y - A)(b^2 - a^2)/2 - B (b^3 - a^3)/3
  const auto seg_below = [&](std::size_t i, Value a, Value b) {
    Value first = t.scale(t.mul(t.sub(t.constant(y), A[i]), t.sub(sq(b), sq(a))), 0.5);
    Value second = t.scale(t.mul(B[i], t.sub(cube(b), cube(a))), 1.0 / 3.0);
    return t.sub(first, second);
  };
  // above: (A - y)[(b - a) - (b^2 - a^2)/2] + B [(b^2 - a^2)/2 - (b^3 - a^3)/3]
  const auto seg_above = [&](std::size_t i, Value a, Value b) {
    Value half_sq = t.scale(t.sub(sq(b), sq(a)), 0.5);
    Value first = t.mul(t.sub(A[i], t.constant(y)), t.sub(t.sub(b, a), half_sq));
    Value second = t.mul(B[i], t.sub(half_sq, t.scale(t.sub(cube(b), cube(a)), 1.0 / 3.0)));
    return t.add(first, second);
  };

  Value acc = t.constant(0.0);
  for (std::size_t i = 0; i <= m; ++i) {
    const double av = bval(i), bv = bval(i + 1);
    if (bv <= av) continue;
    if (i == cross_seg) {
      acc = t.add(acc, seg_below(i, bound[i], alpha_star));
      acc = t.add(acc, seg_above(i, alpha_star, bound[i + 1]));
    } else if (bv <= astar_val) {
      acc = t.add(acc, seg_below(i, bound[i], bound[i + 1]));
    } else if (av >= astar_val) {
      acc = t.add(acc, seg_above(i, bound[i], bound[i + 1]));
    } else {
      acc = t.add(acc, seg_below(i, bound[i], alpha_star));
      acc = t.add(acc, seg_above(i, alpha_star, bound[i + 1]));
    }
  }
  return t.scale(acc, 2.0);
}

// ------------------------------------------------------------- metric bundle

struct MetricSummary {
  double mae = 0.0;
  double rmse = 0.0;
  double mis = 0.0;
  double interval_width = 0.0;
  double coverage = 0.0;
  double crossing_rate = 0.0;
};

// Scores one forecast block against truth. mask (if given) selects valid
// entries with nonzero values; everything is computed over valid entries
// only. Crossing is measured before the optional clamp; with clamp_crossed
// the repaired bounds u <- max(u, l) feed the width/coverage/MIS numbers.
inline MetricSummary summary_metrics(const Tensor& point, const Tensor& lower,
                                     const Tensor& upper, const Tensor& truth,
                                     const Tensor* mask, double rho,
                                     bool clamp_crossed = false) {
  check_rho(rho);
  require(point.shape == truth.shape && lower.shape == truth.shape && upper.shape == truth.shape,
          "summary_metrics: forecast/truth shapes disagree");
  if (mask != nullptr)
    require(mask->shape == truth.shape, "summary_metrics: mask shape disagrees");

  std::vector<double> fs, ls, us, ys;
  std::int64_t crossed = 0;
  for (std::int64_t i = 0; i < truth.numel(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0.0) continue;
    double u = upper[i];
    const double l = lower[i];
    if (u < l) {
      ++crossed;
      if (clamp_crossed) u = l;
    }
    fs.push_back(point[i]);
    ls.push_back(l);
    us.push_back(u);
    ys.push_back(truth[i]);
  }
  require(!ys.empty(), "summary_metrics: all entries are masked");

  MetricSummary out;
  const double n = static_cast<double>(ys.size());
  double ae = 0.0, se = 0.0, width = 0.0;
  std::int64_t covered = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double err = fs[i] - ys[i];
    ae += std::fabs(err);
    se += err * err;
    width += us[i] - ls[i];
    if (ys[i] >= ls[i] && ys[i] <= us[i]) ++covered;
  }
  out.mae = ae / n;
  out.rmse = std::sqrt(se / n);
  out.interval_width = width / n;
  out.coverage = static_cast<double>(covered) / n;
  out.crossing_rate = static_cast<double>(crossed) / n;
  out.mis = mis_metric(us, ls, ys, rho);
  return out;
}

}  // namespace stuq
