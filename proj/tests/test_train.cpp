#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "stuq/train.hpp"
#include "stuq/uq.hpp"

using namespace stuq;

namespace {

Dataset constant_dataset(std::int64_t T, std::int64_t P, double c) {
  SyntheticSpec spec;
  spec.kind = "graph-diffusion";
  spec.length = T;
  spec.nodes = P;
  spec.noise_std = 0.0;
  spec.damping = 1.0;
  Dataset ds = make_synthetic(spec, 5, 3, 2);
  ds.values.fill(c);
  ds.finalize();
  return ds;
}

Dataset small_diffusion(std::int64_t T = 200, std::uint64_t seed = 9) {
  SyntheticSpec spec;
  spec.kind = "graph-diffusion";
  spec.length = T;
  spec.nodes = 4;
  spec.noise_std = 0.15;
  spec.damping = 0.9;
  return make_synthetic(spec, seed, 3, 2);
}

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.cell_kind = "graph-conv";
  cfg.hidden_units = 6;
  cfg.diffusion_steps = 2;
  cfg.support_set = "dual-random-walk";
  return cfg;
}

TrainConfig quick_tc(std::int64_t epochs, double lr = 0.02) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 16;
  tc.lr = lr;
  tc.patience = epochs;  // no early stop unless requested
  return tc;
}

}  // namespace

TEST_CASE("constant targets are learned to small validation MAE", "[train]") {
  Dataset ds = constant_dataset(120, 3, 0.7);
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(50, 0.05);
  TrainResult res = train_model(f, ds, tc);
  REQUIRE(res.best_val < 0.05);
  REQUIRE(evaluate_loss(f, ds, ds.val_windows, tc.rho, tc.point_weight) < 0.05);
}

TEST_CASE("patience zero runs exactly one epoch", "[train]") {
  Dataset ds = small_diffusion();
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(50);
  tc.patience = 0;
  TrainResult res = train_model(f, ds, tc);
  REQUIRE(res.epochs_run == 1);
  REQUIRE(res.train_loss.size() == 1);
  REQUIRE(res.val_loss.size() == 1);
  REQUIRE(res.best_epoch == 0);
}

TEST_CASE("early stopping halts after patience non-improving epochs", "[train]") {
  Dataset ds = small_diffusion();
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(200, 0.05);
  tc.patience = 3;
  TrainResult res = train_model(f, ds, tc);
  REQUIRE(res.epochs_run < 200);
  // the last patience epochs after best_epoch did not improve
  REQUIRE(res.epochs_run == res.best_epoch + 1 + 3);
}

TEST_CASE("best-validation snapshot is restored on return", "[train]") {
  Dataset ds = small_diffusion();
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(12, 0.08);  // deliberately jumpy
  TrainResult res = train_model(f, ds, tc);
  REQUIRE(res.best_val == *std::min_element(res.val_loss.begin(), res.val_loss.end()));
  const double now = evaluate_loss(f, ds, ds.val_windows, tc.rho, tc.point_weight);
  REQUIRE_THAT(now, Catch::Matchers::WithinAbs(res.best_val, 1e-12));
}

TEST_CASE("training is deterministic in the seed", "[train]") {
  Dataset ds = small_diffusion();
  auto run = [&](std::uint64_t seed) {
    Forecaster f = make_forecaster(ds, small_cfg(), 3);
    TrainConfig tc = quick_tc(6);
    tc.seed = seed;
    TrainResult r = train_model(f, ds, tc);
    return std::make_pair(f.params.flatten(), r.val_loss);
  };
  auto a = run(11), b = run(11), c = run(12);
  REQUIRE(a.first == b.first);
  REQUIRE(a.second == b.second);
  REQUIRE(a.first != c.first);
}

TEST_CASE("scheduled sampling changes the trajectory and stays deterministic", "[train]") {
  Dataset ds = small_diffusion();
  auto run = [&](std::int64_t decay) {
    Forecaster f = make_forecaster(ds, small_cfg(), 3);
    TrainConfig tc = quick_tc(6);
    tc.sampling_decay_epochs = decay;
    train_model(f, ds, tc);
    return f.params.flatten();
  };
  auto forced = run(0);
  auto decayed1 = run(4);
  auto decayed2 = run(4);
  REQUIRE(decayed1 == decayed2);
  REQUIRE(forced != decayed1);
}

TEST_CASE("divergent training raises an error naming the epoch", "[train]") {
  // lr 1e200 pushes weights to ~1e199; the free-running validation pass then
  // multiplies the fed-back forecast by those weights, overflowing to inf
  Dataset ds = small_diffusion();
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(10, 1e200);
  tc.clip_norm = 0.0;  // no rescue
  try {
    train_model(f, ds, tc);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("epoch"));
  }
}

TEST_CASE("window overrides and weights reshape the training set", "[train]") {
  Dataset ds = small_diffusion();

  // training restricted to a subset still runs and validates
  std::vector<std::int64_t> sub(ds.train_windows.begin(), ds.train_windows.begin() + 20);
  Forecaster f = make_forecaster(ds, small_cfg(), 3);
  TrainConfig tc = quick_tc(3);
  TrainResult r = train_model(f, ds, tc, &sub);
  REQUIRE(r.epochs_run == 3);

  // weight vector must match the override length and be nonnegative
  std::vector<double> wrong(5, 1.0);
  Forecaster g = make_forecaster(ds, small_cfg(), 3);
  REQUIRE_THROWS_AS(train_model(g, ds, tc, &sub, &wrong), ValidationError);
  std::vector<double> neg(sub.size(), 1.0);
  neg[0] = -1.0;
  REQUIRE_THROWS_AS(train_model(g, ds, tc, &sub, &neg), ValidationError);

  // all-zero weights cannot train
  std::vector<double> zeros(sub.size(), 0.0);
  REQUIRE_THROWS_AS(train_model(g, ds, tc, &sub, &zeros), ValidationError);

  // dirichlet-style weights train deterministically
  std::vector<double> w(sub.size(), 1.0);
  w[0] = 3.0;
  w[1] = 0.0;
  Forecaster h1 = make_forecaster(ds, small_cfg(), 3);
  Forecaster h2 = make_forecaster(ds, small_cfg(), 3);
  train_model(h1, ds, tc, &sub, &w);
  train_model(h2, ds, tc, &sub, &w);
  REQUIRE(h1.params.flatten() == h2.params.flatten());
}

TEST_CASE("config and dataset mismatches are rejected", "[train]") {
  Dataset ds = small_diffusion();
  Forecaster f = make_forecaster(ds, small_cfg(), 3);

  TrainConfig bad = quick_tc(5);
  bad.epochs = 0;
  REQUIRE_THROWS_AS(train_model(f, ds, bad), ValidationError);
  bad = quick_tc(5);
  bad.batch_size = 0;
  REQUIRE_THROWS_AS(train_model(f, ds, bad), ValidationError);
  bad = quick_tc(5);
  bad.rho = 1.5;
  REQUIRE_THROWS_AS(train_model(f, ds, bad), ValidationError);

  // horizon mismatch: model built for another dataset shape
  SyntheticSpec spec;
  spec.kind = "graph-diffusion";
  spec.length = 200;
  spec.nodes = 4;
  Dataset other = make_synthetic(spec, 9, 3, 1);  // horizon 1 vs model 2
  REQUIRE_THROWS_AS(train_model(f, other, quick_tc(2)), ValidationError);

  REQUIRE_THROWS_AS(evaluate_loss(f, ds, {}, 0.05, 1.0), ValidationError);
}
