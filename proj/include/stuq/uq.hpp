#pragma once

// The six uncertainty-quantification procedures: point baseline, bootstrap
// ensembles, quantile regression, spline-quantile regression, interval (MIS)
// regression, MC dropout, and SGNHT posterior sampling. Each maps a model
// config, a dataset, and a budget to a ProbabilisticForecast over a window
// list, in raw (denormalized) units. Sampling-based methods derive bounds
// exclusively through empirical_interval, so lower <= upper always holds for
// them; head-based methods report crossings instead of hiding them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stuq/common.hpp"
#include "stuq/data.hpp"
#include "stuq/models.hpp"
#include "stuq/rng.hpp"
#include "stuq/scoring.hpp"
#include "stuq/train.hpp"

namespace stuq {

struct ProbabilisticForecast {
  std::string method;
  double rho = 0.0;
  bool has_interval = false;
  bool crossing = false;  // any upper < lower (head-based methods only)
  std::vector<std::int64_t> windows;  // evaluated window starts
  Tensor mean;                        // (W, H, P, out_dim), raw units
  Tensor lower, upper;                // (W, H, P, out_dim) when has_interval
  std::vector<Tensor> raw_samples;    // per sample (W, H, P, out_dim), sampling methods
};

struct EnsembleBudget {
  std::int64_t replicates = 25;  // B
  double keep_fraction = 0.5;    // training windows kept per replicate
  std::uint64_t base_seed = 0;
  std::string weighting = "subsample";  // "subsample" | "dirichlet"

  void validate() const {
    require(replicates >= 1, "bootstrap: replicates must be positive");
    require(keep_fraction > 0.0 && keep_fraction <= 1.0,
            "bootstrap: keep fraction must lie in (0,1]");
    require(weighting == "subsample" || weighting == "dirichlet",
            "bootstrap: unknown weighting '" + weighting + "'");
  }
};

struct SamplerConfig {
  double h = 5e-4;           // step size
  double diffusion_a = 1.0;  // injected-noise scale A
  double xi0 = 1.0;          // thermostat initialization
  double prior_variance = 4.0;
  double init_std = 0.2;
  std::int64_t burn_in = 500;  // steps per chain before the first draw
  std::int64_t thinning = 1;   // steps between retained draws
  std::int64_t chains = 25;
  std::int64_t draws_per_chain = 1;
  std::int64_t batch_size = 32;
  std::int64_t max_epochs = 50;  // hard cap on sampling epochs; 0 = uncapped
  std::uint64_t seed = 0;

  void validate() const {
    require(h > 0.0, "sgnht: step size h must be positive");
    require(diffusion_a >= 0.0, "sgnht: diffusion A must be nonnegative");
    require(prior_variance > 0.0, "sgnht: prior variance must be positive");
    require(init_std > 0.0, "sgnht: init std must be positive");
    require(burn_in >= 0, "sgnht: burn-in must be nonnegative");
    require(thinning >= 1, "sgnht: thinning must be positive");
    require(chains >= 1, "sgnht: chains must be positive");
    require(draws_per_chain >= 1, "sgnht: draws per chain must be positive");
    require(batch_size >= 1, "sgnht: batch size must be positive");
    require(max_epochs >= 0, "sgnht: epoch cap must be nonnegative");
  }
};

// ----------------------------------------------------------- SGNHT stepper

struct SgnhtState {
  std::vector<double> theta, p;
  double xi = 0.0;
};

// One sweep of the thermostat update with sequential-assignment semantics:
// the position moves under the current momentum, the gradient is evaluated
// at the fresh position, friction uses the pre-update momentum, and the
// thermostat integrates the new kinetic energy.
//   theta <- theta + p h
//   p     <- p - grad(theta) h - xi p h + N(0, 2 A h)
//   xi    <- xi + (p'p / d - 1) h
template <class GradFn>
inline void sgnht_step(SgnhtState& s, GradFn&& grad_fn, double h, double diffusion_a, Rng& rng) {
  const std::size_t d = s.theta.size();
  require(d > 0 && s.p.size() == d, "sgnht: empty or mismatched state");
  for (std::size_t i = 0; i < d; ++i) s.theta[i] += s.p[i] * h;
  std::vector<double> g = grad_fn(s.theta);
  require(g.size() == d, "sgnht: gradient size mismatch");
  const double noise = std::sqrt(2.0 * diffusion_a * h);
  double ke = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    s.p[i] += -g[i] * h - s.xi * s.p[i] * h + (noise > 0.0 ? noise * rng.normal() : 0.0);
    ke += s.p[i] * s.p[i];
  }
  s.xi += (ke / static_cast<double>(d) - 1.0) * h;
}

// --------------------------------------------------------- shared plumbing

inline std::vector<GraphSupport> dataset_supports(const Dataset& data, const ModelConfig& cfg) {
  if (cfg.cell_kind == "graph-conv") {
    require(data.graph.has_value(), "method: graph-conv model needs a dataset adjacency");
    return make_supports(*data.graph, cfg.support_set);
  }
  return {};
}

// Builds a forecaster whose horizon/input/grid fields follow the dataset.
inline Forecaster make_forecaster(const Dataset& data, ModelConfig cfg, std::uint64_t init_seed) {
  cfg.horizon = data.horizon;
  cfg.input_dim = data.D();
  if (cfg.cell_kind == "grid-conv") {
    require(data.grid_w > 0 && data.grid_h > 0, "method: grid-conv model needs a grid dataset");
    cfg.grid_w = data.grid_w;
    cfg.grid_h = data.grid_h;
  }
  std::vector<GraphSupport> sups = dataset_supports(data, cfg);
  return Forecaster(std::move(cfg), data.P(), std::move(sups), init_seed);
}

// Frozen forecast of normalized head channels over windows: (W, H, P, od*ch).
inline Tensor forecast_channels(const Forecaster& f, const Dataset& data,
                                const std::vector<std::int64_t>& windows,
                                const std::vector<Tensor>* masks = nullptr) {
  require(!windows.empty(), "forecast: empty window list");
  const std::int64_t W = static_cast<std::int64_t>(windows.size());
  const std::int64_t H = f.cfg.horizon, P = f.P;
  const std::int64_t C = f.cfg.output_dim * f.cfg.head_channels();
  Tensor out(Shape{W, H, P, C});
  std::size_t pos = 0;
  for (std::int64_t w : windows) {
    Tensor pred = f.predict(data.window_input(w), masks);
    std::copy(pred.data.begin(), pred.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += pred.data.size();
  }
  return out;
}

// Affine-denormalizes per-feature channels: channel c belongs to feature
// c / ch. Valid for point/quantile/interval channels, not raw spline params.
inline Tensor denormalize_channels(const Dataset& data, Tensor chans, std::int64_t ch) {
  require(chans.shape.rank() == 4, "denormalize: expected (W, H, P, C)");
  const std::int64_t C = chans.shape[3];
  require(C % ch == 0, "denormalize: channel count not divisible by per-feature width");
  const std::int64_t positions = chans.numel() / C;
  for (std::int64_t i = 0; i < positions; ++i)
    for (std::int64_t c = 0; c < C; ++c) {
      double& v = chans.data[static_cast<std::size_t>(i * C + c)];
      v = data.denormalize(v, c / ch);
    }
  return chans;
}

// Extract one channel per feature from a (W, H, P, od*ch) block.
inline Tensor take_channel(const Tensor& chans, std::int64_t ch, std::int64_t which) {
  require(chans.shape.rank() == 4 && chans.shape[3] % ch == 0, "take_channel: bad shape");
  const std::int64_t od = chans.shape[3] / ch;
  Tensor out(Shape{chans.shape[0], chans.shape[1], chans.shape[2], od});
  const std::int64_t positions = chans.numel() / chans.shape[3];
  for (std::int64_t i = 0; i < positions; ++i)
    for (std::int64_t d = 0; d < od; ++d)
      out.data[static_cast<std::size_t>(i * od + d)] =
          chans.data[static_cast<std::size_t>(i * chans.shape[3] + d * ch + which)];
  return out;
}

// Mean + order-statistic interval across a sample set of equal-shape tensors.
inline ProbabilisticForecast assemble_from_samples(std::string method, double rho,
                                                   std::vector<std::int64_t> windows,
                                                   std::vector<Tensor> samples) {
  require(!samples.empty(), "assemble: no samples");
  const std::size_t S = samples.size();
  for (const Tensor& s : samples)
    require(s.shape == samples[0].shape, "assemble: sample shapes disagree");

  ProbabilisticForecast pf;
  pf.method = std::move(method);
  pf.rho = rho;
  pf.windows = std::move(windows);
  pf.mean = Tensor::zeros(samples[0].shape);
  for (const Tensor& s : samples)
    for (std::size_t i = 0; i < s.data.size(); ++i) pf.mean.data[i] += s.data[i];
  for (double& v : pf.mean.data) v /= static_cast<double>(S);

  if (S >= 2) {
    pf.has_interval = true;
    pf.lower = Tensor::zeros(samples[0].shape);
    pf.upper = Tensor::zeros(samples[0].shape);
    std::vector<double> vals(S);
    for (std::size_t i = 0; i < pf.mean.data.size(); ++i) {
      for (std::size_t s = 0; s < S; ++s) vals[s] = samples[s].data[i];
      IntervalSpec iv = empirical_interval(vals, rho);
      pf.lower.data[i] = iv.lower;
      pf.upper.data[i] = iv.upper;
    }
  }
  pf.raw_samples = std::move(samples);
  return pf;
}

// ------------------------------------------------------------ the methods

struct TrainedModel {
  Forecaster model;
  TrainResult result;
};

// Point training: MAE by default (point head), teacher-forcing schedule,
// early stopping, best-validation snapshot.
inline TrainedModel train_point(const Dataset& data, ModelConfig cfg, TrainConfig tc,
                                std::uint64_t seed,
                                const std::vector<std::int64_t>* windows_override = nullptr,
                                const std::vector<double>* window_weights = nullptr) {
  cfg.head_kind = "point";
  Forecaster f = make_forecaster(data, std::move(cfg), derive_seed(seed, 0));
  tc.seed = derive_seed(seed, 1);
  TrainResult r = train_model(f, data, tc, windows_override, window_weights);
  return {std::move(f), std::move(r)};
}

inline ProbabilisticForecast point_forecast(const Dataset& data, const ModelConfig& cfg,
                                            const TrainConfig& tc, std::uint64_t seed,
                                            const std::vector<std::int64_t>& eval_windows) {
  TrainedModel tm = train_point(data, cfg, tc, seed);
  ProbabilisticForecast pf;
  pf.method = "point";
  pf.rho = tc.rho;
  pf.windows = eval_windows;
  pf.mean = denormalize_channels(data, forecast_channels(tm.model, data, eval_windows), 1);
  return pf;
}

// Bootstrap ensemble: B point models on independently subsampled (or
// Dirichlet-reweighted) training windows; bounds via empirical_interval.
// Per-replicate seeds derive from (base_seed, b), so growing B preserves
// earlier replicates byte-for-byte.
inline ProbabilisticForecast bootstrap_forecast(const Dataset& data, const ModelConfig& cfg,
                                                const TrainConfig& tc,
                                                const EnsembleBudget& budget, double rho,
                                                const std::vector<std::int64_t>& eval_windows) {
  budget.validate();
  check_rho(rho);
  require(budget.replicates >= 2, "bootstrap: B = 1 and rho < 1 leave the interval undefined");

  const std::vector<std::int64_t>& tw = data.train_windows;
  const std::int64_t n = static_cast<std::int64_t>(tw.size());
  std::vector<Tensor> samples;
  samples.reserve(static_cast<std::size_t>(budget.replicates));
  for (std::int64_t b = 0; b < budget.replicates; ++b) {
    const std::uint64_t bs = derive_seed(budget.base_seed, static_cast<std::uint64_t>(b));
    std::vector<std::int64_t> sub;
    std::vector<double> weights;
    const std::vector<double>* wptr = nullptr;
    if (budget.weighting == "subsample") {
      if (budget.keep_fraction >= 1.0) {
        sub = tw;
      } else {
        std::vector<std::int64_t> order = tw;
        Rng r(derive_seed(bs, 0));
        for (std::int64_t i = n - 1; i > 0; --i)
          std::swap(order[static_cast<std::size_t>(i)],
                    order[r.below(static_cast<std::uint64_t>(i + 1))]);
        const std::int64_t k =
            std::max<std::int64_t>(1, std::llround(budget.keep_fraction * static_cast<double>(n)));
        sub.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)));
        std::sort(sub.begin(), sub.end());
      }
    } else {  // dirichlet: flat Dirichlet weights scaled to mean 1
      sub = tw;
      Rng r(derive_seed(bs, 0));
      weights.resize(static_cast<std::size_t>(n));
      double total = 0.0;
      for (double& w : weights) {
        w = -std::log(1.0 - r.uniform());  // Exp(1)
        total += w;
      }
      for (double& w : weights) w = w / total * static_cast<double>(n);
      wptr = &weights;
    }
    TrainedModel tm = train_point(data, cfg, tc, derive_seed(bs, 1), &sub, wptr);
    samples.push_back(
        denormalize_channels(data, forecast_channels(tm.model, data, eval_windows), 1));
  }
  return assemble_from_samples("bootstrap", rho, eval_windows, std::move(samples));
}

// Quantile regression: one model with the (0.025, 0.5, 0.975) pinball heads;
// the outer heads are the bounds (rho = 0.05), the median is the mean.
// ensemble > 1 averages the heads of independently trained regressors.
inline ProbabilisticForecast quantile_forecast(const Dataset& data, const ModelConfig& cfg,
                                               const TrainConfig& tc, std::uint64_t seed,
                                               const std::vector<std::int64_t>& eval_windows,
                                               std::int64_t ensemble = 1) {
  require(ensemble >= 1, "quantile: ensemble size must be positive");
  ModelConfig c = cfg;
  c.head_kind = "quantile-3";
  Tensor chans;
  for (std::int64_t e = 0; e < ensemble; ++e) {
    Forecaster f = make_forecaster(data, c, derive_seed(derive_seed(seed, e), 0));
    TrainConfig et = tc;
    et.seed = derive_seed(derive_seed(seed, e), 1);
    train_model(f, data, et);
    Tensor one = forecast_channels(f, data, eval_windows);
    if (e == 0) {
      chans = std::move(one);
    } else {
      for (std::size_t i = 0; i < chans.data.size(); ++i) chans.data[i] += one.data[i];
    }
  }
  if (ensemble > 1)
    for (double& v : chans.data) v /= static_cast<double>(ensemble);

  ProbabilisticForecast pf;
  pf.method = "quantile";
  pf.rho = 0.05;
  pf.windows = eval_windows;
  pf.has_interval = true;
  chans = denormalize_channels(data, std::move(chans), 3);
  pf.lower = take_channel(chans, 3, 0);
  pf.mean = take_channel(chans, 3, 1);
  pf.upper = take_channel(chans, 3, 2);
  for (std::size_t i = 0; i < pf.lower.data.size(); ++i)
    if (pf.upper.data[i] < pf.lower.data[i]) pf.crossing = true;
  return pf;
}

// Interval (MIS) regression: lower/point/upper heads trained by the MIS
// surrogate loss at the requested rho.
inline ProbabilisticForecast mis_forecast(const Dataset& data, const ModelConfig& cfg,
                                          const TrainConfig& tc, std::uint64_t seed, double rho,
                                          const std::vector<std::int64_t>& eval_windows,
                                          std::int64_t ensemble = 1) {
  require(ensemble >= 1, "mis: ensemble size must be positive");
  check_rho(rho);
  ModelConfig c = cfg;
  c.head_kind = "interval-3";
  Tensor chans;
  for (std::int64_t e = 0; e < ensemble; ++e) {
    Forecaster f = make_forecaster(data, c, derive_seed(derive_seed(seed, e), 0));
    TrainConfig et = tc;
    et.rho = rho;
    et.seed = derive_seed(derive_seed(seed, e), 1);
    train_model(f, data, et);
    Tensor one = forecast_channels(f, data, eval_windows);
    if (e == 0) {
      chans = std::move(one);
    } else {
      for (std::size_t i = 0; i < chans.data.size(); ++i) chans.data[i] += one.data[i];
    }
  }
  if (ensemble > 1)
    for (double& v : chans.data) v /= static_cast<double>(ensemble);

  ProbabilisticForecast pf;
  pf.method = "mis";
  pf.rho = rho;
  pf.windows = eval_windows;
  pf.has_interval = true;
  chans = denormalize_channels(data, std::move(chans), 3);
  pf.lower = take_channel(chans, 3, 0);
  pf.mean = take_channel(chans, 3, 1);
  pf.upper = take_channel(chans, 3, 2);
  for (std::size_t i = 0; i < pf.lower.data.size(); ++i)
    if (pf.upper.data[i] < pf.lower.data[i]) pf.crossing = true;
  return pf;
}

// Spline-quantile regression: the 11-parameter monotone quantile function
// trained by closed-form CRPS; bounds are exact spline quantiles, so
// crossing is structurally impossible.
inline ProbabilisticForecast sq_forecast(const Dataset& data, const ModelConfig& cfg,
                                         const TrainConfig& tc, std::uint64_t seed, double rho,
                                         const std::vector<std::int64_t>& eval_windows) {
  check_rho(rho);
  ModelConfig c = cfg;
  c.head_kind = "spline-11";
  Forecaster f = make_forecaster(data, c, derive_seed(seed, 0));
  TrainConfig et = tc;
  et.seed = derive_seed(seed, 1);
  train_model(f, data, et);
  Tensor chans = forecast_channels(f, data, eval_windows);  // normalized raw params

  const std::int64_t ch = SplineQuantileParams::kParamCount;
  const std::int64_t od = chans.shape[3] / ch;
  Shape out_shape{chans.shape[0], chans.shape[1], chans.shape[2], od};
  ProbabilisticForecast pf;
  pf.method = "sq";
  pf.rho = rho;
  pf.windows = eval_windows;
  pf.has_interval = true;
  pf.mean = Tensor::zeros(out_shape);
  pf.lower = Tensor::zeros(out_shape);
  pf.upper = Tensor::zeros(out_shape);
  const std::int64_t positions = chans.numel() / chans.shape[3];
  std::vector<double> raw(static_cast<std::size_t>(ch));
  for (std::int64_t i = 0; i < positions; ++i)
    for (std::int64_t d = 0; d < od; ++d) {
      const std::size_t base = static_cast<std::size_t>(i * chans.shape[3] + d * ch);
      std::copy(chans.data.begin() + static_cast<std::ptrdiff_t>(base),
                chans.data.begin() + static_cast<std::ptrdiff_t>(base + ch), raw.begin());
      SplineShape shape = SplineQuantileParams::from_flat(raw).shape();
      const std::size_t o = static_cast<std::size_t>(i * od + d);
      pf.mean.data[o] = data.denormalize(spline_quantile_eval(shape, 0.5), d);
      pf.lower.data[o] = data.denormalize(spline_quantile_eval(shape, rho / 2.0), d);
      pf.upper.data[o] = data.denormalize(spline_quantile_eval(shape, 1.0 - rho / 2.0), d);
    }
  return pf;
}

// MC dropout on an already-trained point model: T stochastic passes under
// independent seeded masks; bounds via empirical_interval.
inline ProbabilisticForecast mc_dropout_forecast(const Forecaster& trained, const Dataset& data,
                                                 double rate, std::int64_t passes, double rho,
                                                 std::uint64_t seed,
                                                 const std::vector<std::int64_t>& eval_windows) {
  require(rate >= 0.0 && rate < 1.0, "mc-dropout: rate must lie in [0,1)");
  check_rho(rho);
  require(passes >= 2, "mc-dropout: T = 1 and rho < 1 leave the interval undefined");
  require(trained.cfg.head_kind == "point", "mc-dropout: needs a point-head model");
  std::vector<Tensor> samples;
  samples.reserve(static_cast<std::size_t>(passes));
  for (std::int64_t i = 0; i < passes; ++i) {
    auto masks =
        make_dropout_masks(trained.params, rate, derive_seed(seed, static_cast<std::uint64_t>(i)));
    samples.push_back(denormalize_channels(
        data, forecast_channels(trained, data, eval_windows, &masks), 1));
  }
  return assemble_from_samples("mc-dropout", rho, eval_windows, std::move(samples));
}

// Minibatch posterior potential gradient for the model sampler:
// L(theta) = N_train * mean-per-window [ 1/2 sum masked (y - f)^2 ]
//          + 1/2 ||theta||^2 / prior_variance
// with teacher-forced decoding, all in normalized space.
inline std::vector<double> sgnht_model_gradient(Forecaster& f, const Dataset& data,
                                                const std::vector<std::int64_t>& batch,
                                                double n_train, double prior_variance) {
  require(!batch.empty(), "sgnht: empty minibatch");
  Tape t;
  BoundParams bp = f.bind(t, true);
  Value acc = t.constant(0.0);
  const std::int64_t od = f.cfg.output_dim, P = f.P, H = f.cfg.horizon;
  for (std::int64_t w : batch) {
    Tensor y = data.window_target(w);
    ForecastOutput out = f.run(t, bp, data.window_input(w), &y);
    Tensor mask = data.window_target_mask(w, od);
    for (std::int64_t j = 0; j < H; ++j) {
      Tensor yt(Shape{P, od}), mt(Shape{P, od});
      for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t d = 0; d < od; ++d) {
          yt.at2(p, d) = y.at3(j, p, d);
          mt.at2(p, d) = mask.at3(j, p, d);
        }
      Value diff = t.sub(out.frames[static_cast<std::size_t>(j)], t.input(yt));
      acc = t.add(acc, t.sum_all(t.mul(t.mul(diff, diff), t.input(mt))));
    }
  }
  Value loss = t.scale(acc, 0.5 * n_train / static_cast<double>(batch.size()));
  Value prior = t.constant(0.0);
  for (Value leaf : bp.leaves) prior = t.add(prior, t.sum_all(t.mul(leaf, leaf)));
  loss = t.add(loss, t.scale(prior, 0.5 / prior_variance));
  t.backward(loss);

  std::vector<double> g;
  g.reserve(static_cast<std::size_t>(f.params.total_scalars()));
  for (Value leaf : bp.leaves) {
    const Tensor& gt = t.grad(leaf);
    g.insert(g.end(), gt.data.begin(), gt.data.end());
  }
  return g;
}

// SGNHT posterior sampling: per-chain initialization theta ~ N(0, init_std^2),
// p ~ N(0, I), xi = xi0; burn-in, thinned draws; posterior-predictive mean
// and empirical_interval bounds over the pooled draws.
inline ProbabilisticForecast sgnht_sample(const Dataset& data, const ModelConfig& base_cfg,
                                          const SamplerConfig& sc, double rho,
                                          const std::vector<std::int64_t>& eval_windows) {
  sc.validate();
  check_rho(rho);
  require(sc.chains * sc.draws_per_chain >= 2,
          "sgnht: need at least 2 posterior draws for an interval");

  ModelConfig cfg = base_cfg;
  cfg.head_kind = "point";
  Forecaster f = make_forecaster(data, std::move(cfg), 0);
  const std::int64_t d = f.params.total_scalars();
  const std::vector<std::int64_t>& tw = data.train_windows;
  require(!tw.empty(), "sgnht: no training windows");
  const std::int64_t n = static_cast<std::int64_t>(tw.size());
  const std::int64_t batches_per_epoch = (n + sc.batch_size - 1) / sc.batch_size;
  const std::int64_t total_steps = sc.burn_in + sc.draws_per_chain * sc.thinning;
  if (sc.max_epochs > 0)
    require(total_steps <= sc.max_epochs * batches_per_epoch,
            "sgnht: sampling budget exceeds the epoch cap; raise max-epochs or shrink "
            "burn-in/draws");

  std::vector<Tensor> samples;
  for (std::int64_t c = 0; c < sc.chains; ++c) {
    const std::uint64_t cs = derive_seed(sc.seed, static_cast<std::uint64_t>(c));
    Rng init_rng(derive_seed(cs, 0));
    Rng noise_rng(derive_seed(cs, 1));
    Rng batch_rng(derive_seed(cs, 2));

    SgnhtState st;
    st.theta.resize(static_cast<std::size_t>(d));
    st.p.resize(static_cast<std::size_t>(d));
    st.xi = sc.xi0;
    for (double& v : st.theta) v = init_rng.normal(0.0, sc.init_std);
    for (double& v : st.p) v = init_rng.normal();

    std::vector<std::int64_t> order = tw;
    auto reshuffle = [&] {
      for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[batch_rng.below(static_cast<std::uint64_t>(i + 1))]);
    };
    reshuffle();
    std::int64_t pos = 0;

    std::int64_t collected = 0;
    for (std::int64_t step = 0; step < total_steps; ++step) {
      std::vector<std::int64_t> batch;
      for (std::int64_t k = 0; k < sc.batch_size && k < n; ++k) {
        if (pos == n) {
          reshuffle();
          pos = 0;
        }
        batch.push_back(order[static_cast<std::size_t>(pos++)]);
      }
      auto grad_fn = [&](const std::vector<double>& theta) {
        f.params.unflatten(theta);
        return sgnht_model_gradient(f, data, batch, static_cast<double>(n), sc.prior_variance);
      };
      sgnht_step(st, grad_fn, sc.h, sc.diffusion_a, noise_rng);

      bool finite = std::isfinite(st.xi) && std::abs(st.xi) < 1e8;
      for (double v : st.theta)
        if (!std::isfinite(v)) finite = false;
      for (double v : st.p)
        if (!std::isfinite(v)) finite = false;
      if (!finite)
        throw DivergenceError("sgnht: non-finite state in chain " + std::to_string(c) +
                              " at step " + std::to_string(step));

      const std::int64_t done = step + 1;
      if (done > sc.burn_in && (done - sc.burn_in) % sc.thinning == 0 &&
          collected < sc.draws_per_chain) {
        f.params.unflatten(st.theta);
        samples.push_back(
            denormalize_channels(data, forecast_channels(f, data, eval_windows), 1));
        ++collected;
      }
    }
    require(collected == sc.draws_per_chain, "sgnht: draw schedule did not complete");
  }
  return assemble_from_samples("sg-mcmc", rho, eval_windows, std::move(samples));
}

// ------------------------------------------------------------- evaluation

struct HorizonMetrics {
  std::int64_t step = 0;  // 1-based horizon index
  double mae = 0.0, rmse = 0.0;
  bool has_interval = false;
  double mis = 0.0, width = 0.0, coverage = 0.0, crossing_rate = 0.0;
};

namespace detail {

inline MetricSummary pooled_summary(const ProbabilisticForecast& pf, const Dataset& data,
                                    std::int64_t step /* -1 = all */) {
  require(!pf.windows.empty(), "evaluate: forecast carries no windows");
  const std::int64_t W = static_cast<std::int64_t>(pf.windows.size());
  const std::int64_t H = pf.mean.shape[1], P = pf.mean.shape[2], od = pf.mean.shape[3];
  const std::int64_t lo = step < 0 ? 0 : step, hi = step < 0 ? H : step + 1;
  std::vector<double> point, lower, upper, truth, mask;
  for (std::int64_t w = 0; w < W; ++w) {
    Tensor y = data.window_target_raw(pf.windows[static_cast<std::size_t>(w)]);
    Tensor m = data.window_target_mask(pf.windows[static_cast<std::size_t>(w)], od);
    for (std::int64_t j = lo; j < hi; ++j)
      for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t dd = 0; dd < od; ++dd) {
          const std::size_t idx = static_cast<std::size_t>(((w * H + j) * P + p) * od + dd);
          point.push_back(pf.mean.data[idx]);
          lower.push_back(pf.has_interval ? pf.lower.data[idx] : pf.mean.data[idx]);
          upper.push_back(pf.has_interval ? pf.upper.data[idx] : pf.mean.data[idx]);
          truth.push_back(y.at3(j, p, dd));
          mask.push_back(m.at3(j, p, dd));
        }
  }
  const std::int64_t N = static_cast<std::int64_t>(point.size());
  Tensor pt(Shape{N}), lo_t(Shape{N}), up_t(Shape{N}), tr(Shape{N}), mk(Shape{N});
  pt.data = point;
  lo_t.data = lower;
  up_t.data = upper;
  tr.data = truth;
  mk.data = mask;
  return summary_metrics(pt, lo_t, up_t, tr, &mk, pf.rho > 0.0 ? pf.rho : 0.05);
}

}  // namespace detail

// Per-horizon-step metrics on raw-unit predictions against raw truth.
inline std::vector<HorizonMetrics> evaluate_forecast(const ProbabilisticForecast& pf,
                                                     const Dataset& data) {
  const std::int64_t H = pf.mean.shape[1];
  std::vector<HorizonMetrics> out;
  for (std::int64_t j = 0; j < H; ++j) {
    MetricSummary s = detail::pooled_summary(pf, data, j);
    HorizonMetrics hm;
    hm.step = j + 1;
    hm.mae = s.mae;
    hm.rmse = s.rmse;
    hm.has_interval = pf.has_interval;
    if (pf.has_interval) {
      hm.mis = s.mis;
      hm.width = s.interval_width;
      hm.coverage = s.coverage;
      hm.crossing_rate = s.crossing_rate;
    }
    out.push_back(hm);
  }
  return out;
}

// Pooled-over-everything summary (the sweep's MIS aggregate).
inline MetricSummary evaluate_overall(const ProbabilisticForecast& pf, const Dataset& data) {
  return detail::pooled_summary(pf, data, -1);
}

}  // namespace stuq
