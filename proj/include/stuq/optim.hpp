#pragma once

// Gradient-descent updates over master parameter tensors: plain SGD and
// Adam, with optional global-norm gradient clipping shared by both. The
// training loop owns the tensors; each step consumes gradients collected
// from a tape built for that minibatch.

#include <cmath>
#include <string>
#include <vector>

#include "stuq/common.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

// Scale all gradients by min(1, max_norm / ||g||_global); no-op when already
// inside the ball. Returns the pre-clip global norm.
inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

struct OptimConfig {
  std::string kind = "adam";  // "sgd" | "adam"
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // <= 0 disables clipping
};

class Optimizer {
public:
  Optimizer(std::vector<Tensor*> params, OptimConfig cfg)
      : params_(std::move(params)), cfg_(std::move(cfg)) {
    require(cfg_.kind == "sgd" || cfg_.kind == "adam", "optimizer: unknown kind '" + cfg_.kind + "'");
    require(cfg_.lr > 0.0, "optimizer: learning rate must be positive");
    for (Tensor* p : params_) require(p != nullptr, "optimizer: null parameter");
    if (cfg_.kind == "adam") {
      m_.reserve(params_.size());
      v_.reserve(params_.size());
      for (Tensor* p : params_) {
        m_.push_back(Tensor::zeros(p->shape));
        v_.push_back(Tensor::zeros(p->shape));
      }
    }
  }

  // Apply one update; grads align with the parameter list.
  void step(std::vector<Tensor> grads) {
    require(grads.size() == params_.size(), "optimizer: gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i)
      require(grads[i].shape == params_[i]->shape, "optimizer: gradient shape mismatch");
    if (cfg_.clip_norm > 0.0) clip_global_norm(grads, cfg_.clip_norm);

    if (cfg_.kind == "sgd") {
      ++t_;
      for (std::size_t i = 0; i < params_.size(); ++i)
        for (std::size_t j = 0; j < grads[i].data.size(); ++j)
          params_[i]->data[j] -= cfg_.lr * grads[i].data[j];
      return;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      for (std::size_t j = 0; j < grads[i].data.size(); ++j) {
        const double g = grads[i].data[j];
        m_[i].data[j] = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * g;
        v_[i].data[j] = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i].data[j] / bc1;
        const double vhat = v_[i].data[j] / bc2;
        params_[i]->data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

private:
  std::vector<Tensor*> params_;
  OptimConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace stuq
