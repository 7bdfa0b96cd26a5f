// Acceptance gate: ten independent criteria, each printed as one PASS/FAIL
// line with its runtime. Exit status is 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stuq/harness.hpp"

using namespace stuq;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string g2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---- 1, 3, 6: shared oracle suites with their stated runtime caps --------

Outcome criterion_oracle(OracleOutcome o, double cap_seconds) {
  Outcome out;
  out.pass = o.pass && o.runtime_seconds < cap_seconds;
  out.detail = o.detail;
  if (o.runtime_seconds >= cap_seconds)
    out.detail += " [exceeded " + g2(cap_seconds) + "s budget]";
  return out;
}

// ---- 2: interval-score hand value ----------------------------------------

Outcome criterion_mis_hand_value() {
  const double got = mis_metric(1.0, -1.0, {0.0, 2.0, -3.0}, 0.2);
  Outcome out;
  out.pass = std::fabs(got - 12.0) <= 1e-12;
  out.detail = "mis_metric(rho=0.2, u=1, l=-1, {0,2,-3}) = " + fmt_g17(got) + ", expected 12";
  return out;
}

// ---- 4: quantile recovery on the scalar benchmark ------------------------

// 5000 train pairs with y = x + N(0,1), x ~ U(-2,2); the last 100 window
// pairs hold an evenly spaced x grid so the test split is exactly the grid.
Dataset scalar_benchmark() {
  const std::int64_t train_pairs = 5000, val_pairs = 50, grid_pairs = 100;
  const std::int64_t pairs = train_pairs + val_pairs + grid_pairs;
  const std::int64_t T = 2 * pairs;
  Dataset ds;
  ds.values = Tensor::zeros(Shape{T, 1, 1});
  ds.mask = Tensor(Shape{T, 1, 1});
  ds.mask.fill(1.0);
  Rng rng(41);
  for (std::int64_t k = 0; k < train_pairs + val_pairs; ++k) {
    const double x = rng.uniform(-2.0, 2.0);
    ds.values.at3(2 * k, 0, 0) = x;
    ds.values.at3(2 * k + 1, 0, 0) = x + rng.normal();
  }
  for (std::int64_t i = 0; i < grid_pairs; ++i) {
    const std::int64_t k = train_pairs + val_pairs + i;
    const double x = -2.0 + 4.0 * static_cast<double>(i) / 99.0;
    ds.values.at3(2 * k, 0, 0) = x;
    ds.values.at3(2 * k + 1, 0, 0) = x;  // placeholder target, never scored
  }
  ds.timestamps.resize(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) ds.timestamps[static_cast<std::size_t>(t)] = t;
  ds.node_ids = {"0"};
  Tensor self(Shape{1, 1});
  self.at2(0, 0) = 1.0;
  ds.graph = SpatialGraph(self);
  ds.input_len = 1;
  ds.horizon = 1;
  ds.window_stride = 2;
  ds.split.train = static_cast<double>(2 * train_pairs) / static_cast<double>(T);
  ds.split.val = static_cast<double>(2 * val_pairs) / static_cast<double>(T);
  ds.split.test = static_cast<double>(2 * grid_pairs) / static_cast<double>(T);
  ds.finalize();
  require(ds.train_windows.size() == 5000, "scalar benchmark: expected 5000 train windows");
  require(ds.test_windows.size() == 100, "scalar benchmark: expected the 100-point grid");
  return ds;
}

Outcome criterion_quantile_recovery() {
  Dataset ds = scalar_benchmark();
  ModelConfig mc;
  mc.cell_kind = "graph-conv";
  mc.hidden_units = 16;
  mc.diffusion_steps = 1;
  mc.support_set = "random-walk";
  TrainConfig tc;
  // Large batches keep the 0.975 pinball gradient clean: with small batches the
  // rare above-quantile points (2.5%) make the head's equilibrium sit visibly
  // above the true quantile under minibatch noise.
  tc.epochs = 120;
  tc.batch_size = 256;
  tc.lr = 0.02;
  tc.patience = 120;
  ProbabilisticForecast pf = quantile_forecast(ds, mc, tc, 1, ds.test_windows);

  double mean_err = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < ds.test_windows.size(); ++i) {
    const double x = ds.values.at3(ds.test_windows[i], 0, 0);
    const double err = std::fabs(pf.upper.at4(static_cast<std::int64_t>(i), 0, 0, 0) -
                                 (x + 1.959964));
    mean_err += err;
    worst = std::max(worst, err);
  }
  mean_err /= static_cast<double>(ds.test_windows.size());
  Outcome out;
  out.pass = mean_err <= 0.15;
  out.detail = "mean |q0.975(x) - (x+1.959964)| = " + g2(mean_err) + " over the grid (max " +
               g2(worst) + "), tolerance 0.15";
  return out;
}

// ---- 5: thermostat sampler on the analytic Gaussian target ---------------

Outcome criterion_sgnht_gaussian() {
  const double lambda = 4.0, target_var = 1.0 / lambda;
  const std::int64_t dim = 10, chains = 25, total = 30000, burn = 3000, thin = 10;
  const double h = 0.02;
  double sum = 0.0, sumsq = 0.0;
  std::int64_t n = 0;
  for (std::int64_t c = 0; c < chains; ++c) {
    Rng rng(derive_seed(500, static_cast<std::uint64_t>(c)));
    SgnhtState st;
    st.theta.resize(static_cast<std::size_t>(dim));
    st.p.resize(static_cast<std::size_t>(dim));
    for (double& v : st.theta) v = rng.normal(0.0, std::sqrt(target_var));
    for (double& v : st.p) v = rng.normal();
    st.xi = 1.0;
    const auto grad = [&](const std::vector<double>& th) {
      std::vector<double> g(th.size());
      for (std::size_t i = 0; i < th.size(); ++i) g[i] = lambda * th[i];
      return g;
    };
    for (std::int64_t s = 0; s < total; ++s) {
      sgnht_step(st, grad, h, 1.0, rng);
      if (s >= burn && (s - burn) % thin == 0)
        for (double v : st.theta) {
          sum += v;
          sumsq += v * v;
          ++n;
        }
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sumsq / static_cast<double>(n) - mean * mean;
  const double mean_cap = 0.05 * std::sqrt(target_var);
  Outcome out;
  out.pass = std::fabs(mean) < mean_cap && var > 0.85 * target_var && var < 1.15 * target_var;
  out.detail = "pooled mean " + g2(mean) + " (|.| < " + g2(mean_cap) + "), variance " + g2(var) +
               " vs " + g2(target_var) + " +/-15%, " + std::to_string(n) + " draws";
  return out;
}

// ---- 7: held-out coverage at desk scale ----------------------------------

Outcome criterion_desk_coverage() {
  SyntheticSpec sp;
  sp.kind = "graph-diffusion";
  sp.length = 2000;
  sp.nodes = 10;
  sp.noise_std = 0.1;
  sp.damping = 0.9;
  Dataset ds = make_synthetic(sp, 3, 8, 3);
  ModelConfig mc;
  mc.cell_kind = "graph-conv";
  mc.hidden_units = 12;
  mc.diffusion_steps = 2;
  mc.support_set = "dual-random-walk";
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 32;
  tc.lr = 0.01;
  tc.patience = 12;

  ProbabilisticForecast qf = quantile_forecast(ds, mc, tc, 5, ds.test_windows);
  const double cov_q = evaluate_overall(qf, ds).coverage;
  ProbabilisticForecast mf = mis_forecast(ds, mc, tc, 7, 0.05, ds.test_windows);
  const double cov_m = evaluate_overall(mf, ds).coverage;

  const auto in_band = [](double c) { return c >= 0.90 && c <= 0.98; };
  Outcome out;
  out.pass = in_band(cov_q) && in_band(cov_m);
  out.detail = "held-out coverage: quantile " + g2(cov_q) + ", mis " + g2(cov_m) +
               ", band [0.90, 0.98]";
  return out;
}

// ---- 8: MIS improves with more samples -----------------------------------

ExperimentConfig sweep_base() {
  ExperimentConfig cfg;
  cfg.dataset.synth.kind = "graph-diffusion";
  cfg.dataset.synth.length = 400;
  cfg.dataset.synth.nodes = 5;
  cfg.dataset.synth.noise_std = 0.1;
  cfg.dataset.synth.damping = 0.9;
  cfg.dataset.data_seed = 1;
  cfg.dataset.input_len = 8;
  cfg.dataset.horizon = 2;
  cfg.model.cell_kind = "graph-conv";
  cfg.model.hidden_units = 8;
  cfg.model.diffusion_steps = 2;
  cfg.train.epochs = 8;
  cfg.train.batch_size = 16;
  cfg.train.lr = 0.02;
  cfg.train.patience = 8;
  cfg.method.rho = 0.05;
  cfg.run.seed = 100;
  cfg.sweep.counts = {5, 25};
  cfg.sweep.seed_count = 10;
  return cfg;
}

std::pair<bool, std::string> sweep_trend(const ExperimentConfig& cfg) {
  SweepTable tab = sample_complexity_sweep(cfg);
  double mean5 = 0.0, mean25 = 0.0;
  for (const auto& [s, m] : tab.means) (s == 5 ? mean5 : mean25) = m;
  std::int64_t improved = 0, seeds = 0;
  for (const SweepRow& a : tab.rows) {
    if (a.samples != 5) continue;
    ++seeds;
    for (const SweepRow& b : tab.rows)
      if (b.samples == 25 && b.seed == a.seed && b.mis < a.mis) ++improved;
  }
  const bool ok = mean25 < mean5 && improved >= 8;
  return {ok, cfg.method.tag + " mean MIS " + g2(mean5) + " -> " + g2(mean25) + ", " +
                  std::to_string(improved) + "/" + std::to_string(seeds) + " seeds improved"};
}

Outcome criterion_sample_complexity() {
  ExperimentConfig boot = sweep_base();
  boot.method.tag = "bootstrap";
  boot.method.budget.replicates = 25;
  boot.method.budget.keep_fraction = 0.5;
  auto [ok_b, detail_b] = sweep_trend(boot);

  ExperimentConfig sg = sweep_base();
  sg.method.tag = "sg-mcmc";
  sg.method.sampler.h = 5e-4;
  sg.method.sampler.prior_variance = 4.0;
  sg.method.sampler.init_std = 0.2;
  sg.method.sampler.burn_in = 150;
  sg.method.sampler.thinning = 1;
  sg.method.sampler.chains = 25;
  sg.method.sampler.draws_per_chain = 1;
  sg.method.sampler.batch_size = 8;
  sg.method.sampler.max_epochs = 50;
  auto [ok_s, detail_s] = sweep_trend(sg);

  Outcome out;
  out.pass = ok_b && ok_s;
  out.detail = detail_b + "; " + detail_s;
  return out;
}

// ---- 9: bit-identical reruns for every method ----------------------------

Outcome criterion_determinism() {
  ExperimentConfig base;
  base.dataset.synth.kind = "graph-diffusion";
  base.dataset.synth.length = 140;
  base.dataset.synth.nodes = 3;
  base.dataset.synth.noise_std = 0.15;
  base.dataset.synth.damping = 0.9;
  base.dataset.data_seed = 7;
  base.dataset.input_len = 3;
  base.dataset.horizon = 2;
  base.model.cell_kind = "graph-conv";
  base.model.hidden_units = 4;
  base.model.diffusion_steps = 2;
  base.train.epochs = 2;
  base.train.batch_size = 8;
  base.train.lr = 0.02;
  base.train.patience = 2;
  base.run.seed = 11;
  base.run.eval_limit = 5;

  Outcome out;
  out.pass = true;
  std::string failed;
  for (const std::string& tag : method_tags()) {
    ExperimentConfig cfg = base;
    cfg.method.tag = tag;
    cfg.method.rho = 0.2;
    if (tag == "bootstrap") cfg.method.budget.replicates = 2;
    if (tag == "mc-dropout") {
      cfg.method.dropout_rate = 0.1;
      cfg.method.passes = 3;
    }
    if (tag == "sg-mcmc") {
      cfg.method.sampler.h = 1e-3;
      cfg.method.sampler.burn_in = 10;
      cfg.method.sampler.thinning = 1;
      cfg.method.sampler.chains = 2;
      cfg.method.sampler.draws_per_chain = 1;
      cfg.method.sampler.batch_size = 8;
      cfg.method.sampler.max_epochs = 2;
    }
    Json a = run_experiment(cfg, false).record;
    Json b = run_experiment(cfg, false).record;
    a.erase("wall_clock_seconds");
    b.erase("wall_clock_seconds");
    if (a.dump() != b.dump()) {
      out.pass = false;
      failed += (failed.empty() ? "" : ", ") + tag;
    }
  }
  out.detail = out.pass ? "all 7 methods reproduce their records bit-identically"
                        : "non-deterministic records for: " + failed;
  return out;
}

// ---- 10: scale statement --------------------------------------------------

Outcome criterion_scale_statement() {
  Outcome out;
  out.pass = true;
  out.detail =
      "full-scale benchmark numbers (city traffic / air-quality corpora) need the complete "
      "datasets and GPU-scale training and are not targets here; this suite accepts on "
      "desk-scale statistical properties instead";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  std::vector<int> only;  // optional criterion ids on the command line
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const std::vector<Entry> entries = {
      {1, "interval-minimizer equivalence",
       [] { return criterion_oracle(oracle::prop2_equivalence(), 10.0); }},
      {2, "interval-score hand value", criterion_mis_hand_value},
      {3, "gradient finite differences",
       [] { return criterion_oracle(oracle::gradient_checks(), 30.0); }},
      {4, "scalar quantile recovery", criterion_quantile_recovery},
      {5, "thermostat sampler moments", criterion_sgnht_gaussian},
      {6, "closed-form CRPS", [] { return criterion_oracle(oracle::crps_quadrature(), 10.0); }},
      {7, "desk-scale coverage", criterion_desk_coverage},
      {8, "sample-complexity trend", criterion_sample_complexity},
      {9, "bit-identical reruns", criterion_determinism},
      {10, "scale statement", criterion_scale_statement},
  };

  const double caps[] = {10.0, 0.0, 30.0, 120.0, 60.0, 0.0, 300.0, 0.0, 0.0, 0.0};
  bool all_pass = true;
  for (const Entry& e : entries) {
    if (!only.empty() && std::find(only.begin(), only.end(), e.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double cap = caps[e.id - 1];
    if (cap > 0.0 && secs >= cap && o.pass) {
      o.pass = false;
      o.detail += " [runtime " + g2(secs) + "s exceeded " + g2(cap) + "s]";
    }
    std::printf("%s  %2d  %-32s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", e.id, e.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  std::printf("%s\n", all_pass ? "acceptance: all criteria passed"
                               : "acceptance: at least one criterion FAILED");
  return all_pass ? 0 : 1;
}
