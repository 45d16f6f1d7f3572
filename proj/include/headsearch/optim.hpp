#pragma once

#include <span>
#include <vector>

#include "headsearch/tensor.hpp"

namespace headsearch::optim {

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
//   v <- momentum * v + (grad + weight_decay * param)
//   param <- param - lr * v
struct SgdState {
  std::vector<std::vector<float>> momentum_buffers;
  float lr = 0.06f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
};

// One update using explicit gradients (grads[i] pairs with params[i]).
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, SgdState& state);

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, float lr, float momentum, float weight_decay);

  // Uses each parameter's accumulated gradient; an unallocated gradient is zero.
  void step();
  void zero_grad();

  void set_lr(float lr) { state_.lr = lr; }
  float lr() const { return state_.lr; }
  SgdState& state() { return state_; }
  const SgdState& state() const { return state_; }
  std::span<const Tensor> params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  SgdState state_;
};

// Adam with L2 decay added to the gradient before the moment updates.
class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float weight_decay, float eps = 1e-8f);

  void step();
  void zero_grad();

  float lr() const { return lr_; }
  std::span<const Tensor> params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> first_, second_;
  float lr_, beta1_, beta2_, weight_decay_, eps_;
  long steps_ = 0;
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2
double cosine_lr(long epoch, long total, double lr_max, double lr_min);

void zero_grad(std::span<Tensor> params);

}  // namespace headsearch::optim
