#pragma once

// Minibatched training with teacher forcing, scheduled sampling (linear
// decay of the teacher-forcing probability), gradient clipping, early
// stopping on free-running validation loss, and best-snapshot restoration.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stuq/common.hpp"
#include "stuq/data.hpp"
#include "stuq/models.hpp"
#include "stuq/optim.hpp"
#include "stuq/rng.hpp"

namespace stuq {

struct TrainConfig {
  std::int64_t epochs = 100;
  std::int64_t batch_size = 32;
  std::string optimizer = "adam";
  double lr = 1e-2;
  double clip_norm = 5.0;      // <= 0 disables clipping
  std::int64_t patience = 10;  // early stopping; 0 stops after the first epoch
  std::int64_t sampling_decay_epochs = 0;  // 0 = always teacher-force
  double rho = 0.05;           // interval-3 loss level
  double point_weight = 1.0;   // interval-3 |y-f| anchor weight
  std::uint64_t seed = 0;      // shuffling + scheduled-sampling draws

  void validate() const {
    require(epochs >= 1, "train: epochs must be positive");
    require(batch_size >= 1, "train: batch size must be positive");
    require(patience >= 0, "train: patience must be nonnegative");
    require(sampling_decay_epochs >= 0, "train: sampling decay span must be nonnegative");
    check_rho(rho);
  }
};

struct TrainResult {
  std::vector<double> train_loss, val_loss;  // one entry per epoch run
  std::int64_t best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t epochs_run = 0;
};

// Mean free-running head-matched loss over a window list (used for
// validation; never reads targets as decoder inputs).
inline double evaluate_loss(const Forecaster& f, const Dataset& data,
                            const std::vector<std::int64_t>& windows, double rho,
                            double point_weight) {
  require(!windows.empty(), "evaluate: empty window list");
  LossOptions opt;
  opt.rho = rho;
  opt.point_weight = point_weight;
  double acc = 0.0;
  for (std::int64_t w : windows) {
    Tape t;
    BoundParams bp = f.bind(t, false);
    ForecastOutput out = f.run(t, bp, data.window_input(w));
    Tensor mask = data.window_target_mask(w, f.cfg.output_dim);
    Value loss = forecast_training_loss(t, f.cfg, out, data.window_target(w), &mask, opt);
    acc += t.value(loss).data[0];
  }
  return acc / static_cast<double>(windows.size());
}

// Trains in place; on return the parameters hold the best-validation
// snapshot. train_override restricts (or reweights, via window_weights)
// the training windows — validation always uses the dataset's own split.
inline TrainResult train_model(Forecaster& f, const Dataset& data, const TrainConfig& tc,
                               const std::vector<std::int64_t>* train_override = nullptr,
                               const std::vector<double>* window_weights = nullptr) {
  tc.validate();
  require(data.horizon == f.cfg.horizon, "train: dataset horizon disagrees with model config");
  require(data.D() == f.cfg.input_dim, "train: dataset features disagree with model input_dim");
  require(data.P() == f.P, "train: dataset node count disagrees with model");
  const std::vector<std::int64_t>& tw = train_override ? *train_override : data.train_windows;
  require(!tw.empty(), "train: no training windows");
  require(!data.val_windows.empty(), "train: no validation windows");
  if (window_weights != nullptr) {
    require(window_weights->size() == tw.size(), "train: window weight count mismatch");
    for (double w : *window_weights) require(w >= 0.0, "train: window weights must be nonnegative");
  }

  std::vector<Tensor*> masters;
  for (auto& it : f.params.items()) masters.push_back(&it.tensor);
  OptimConfig oc;
  oc.kind = tc.optimizer;
  oc.lr = tc.lr;
  oc.clip_norm = tc.clip_norm;
  Optimizer opt(masters, oc);

  LossOptions lopt;
  lopt.rho = tc.rho;
  lopt.point_weight = tc.point_weight;

  TrainResult res;
  std::vector<double> best_params;
  std::int64_t bad = 0;
  const std::int64_t n = static_cast<std::int64_t>(tw.size());
  const std::int64_t H = f.cfg.horizon;

  for (std::int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    double p_teacher = 1.0;
    if (tc.sampling_decay_epochs > 0)
      p_teacher = std::max(0.0, 1.0 - static_cast<double>(epoch) /
                                      static_cast<double>(tc.sampling_decay_epochs));

    Rng shuffle_rng(derive_seed(tc.seed, static_cast<std::uint64_t>(2 * epoch)));
    Rng sched_rng(derive_seed(tc.seed, static_cast<std::uint64_t>(2 * epoch + 1)));
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[shuffle_rng.below(static_cast<std::uint64_t>(i + 1))]);

    double epoch_loss = 0.0;
    std::int64_t batches = 0;
    try {
      for (std::int64_t b0 = 0; b0 < n; b0 += tc.batch_size) {
        const std::int64_t b1 = std::min(n, b0 + tc.batch_size);
        Tape t;
        BoundParams bp = f.bind(t, true);
        Value acc = t.constant(0.0);
        double wsum = 0.0;
        for (std::int64_t bi = b0; bi < b1; ++bi) {
          const std::int64_t oi = order[static_cast<std::size_t>(bi)];
          const std::int64_t w = tw[static_cast<std::size_t>(oi)];
          const double weight =
              window_weights ? (*window_weights)[static_cast<std::size_t>(oi)] : 1.0;
          std::vector<int> flags(static_cast<std::size_t>(H), 0);
          for (std::int64_t j = 1; j < H; ++j)
            flags[static_cast<std::size_t>(j)] = sched_rng.bernoulli(p_teacher) ? 1 : 0;
          if (weight == 0.0) continue;
          Tensor y = data.window_target(w);
          ForecastOutput out = f.run(t, bp, data.window_input(w), &y, &flags);
          Tensor mask = data.window_target_mask(w, f.cfg.output_dim);
          Value L = forecast_training_loss(t, f.cfg, out, y, &mask, lopt);
          acc = t.add(acc, weight == 1.0 ? L : t.scale(L, weight));
          wsum += weight;
        }
        if (wsum == 0.0) continue;  // every window in the batch had zero weight
        Value loss = t.scale(acc, 1.0 / wsum);
        t.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(bp.leaves.size());
        for (Value v : bp.leaves) grads.push_back(t.grad(v));
        opt.step(std::move(grads));
        epoch_loss += t.value(loss).data[0];
        ++batches;
      }
      require(batches > 0, "train: all training windows have zero weight");
      res.train_loss.push_back(epoch_loss / static_cast<double>(batches));

      const double vl = evaluate_loss(f, data, data.val_windows, tc.rho, tc.point_weight);
      res.val_loss.push_back(vl);
    } catch (const DivergenceError& e) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    res.epochs_run = epoch + 1;

    if (res.val_loss.back() < res.best_val) {
      res.best_val = res.val_loss.back();
      res.best_epoch = epoch;
      best_params = f.params.flatten();
      bad = 0;
    } else {
      ++bad;
    }
    if (bad >= tc.patience) break;
  }

  require(!best_params.empty(), "train: validation loss never became finite");
  f.params.unflatten(best_params);
  return res;
}

}  // namespace stuq
