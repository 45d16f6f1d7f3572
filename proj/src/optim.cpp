#include "headsearch/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "headsearch/error.hpp"

namespace headsearch::optim {

namespace {

void apply_sgd(Tensor& param, std::span<const float> grad, std::vector<float>& buf, const SgdState& s) {
  auto w = param.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const float g = (grad.empty() ? 0.0f : grad[i]) + s.weight_decay * w[i];
    buf[i] = s.momentum * buf[i] + g;
    w[i] -= s.lr * buf[i];
  }
}

void ensure_buffers(std::span<const Tensor> params, SgdState& state) {
  if (state.momentum_buffers.empty()) {
    for (const Tensor& p : params) state.momentum_buffers.emplace_back(p.numel(), 0.0f);
  }
  if (state.momentum_buffers.size() != params.size()) {
    throw ShapeError("sgd: " + std::to_string(state.momentum_buffers.size()) + " momentum buffers for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.momentum_buffers[i].size() != params[i].numel()) {
      throw ShapeError("sgd: momentum buffer " + std::to_string(i) + " does not match parameter " +
                       shape_str(params[i].shape()));
    }
  }
}

}  // namespace

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, SgdState& state) {
  if (grads.size() != params.size()) throw ShapeError("sgd_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("sgd_step: gradient " + shape_str(grads[i].shape()) + " for parameter " +
                       shape_str(params[i].shape()));
    }
  }
  ensure_buffers(params, state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    apply_sgd(params[i], grads[i].values(), state.momentum_buffers[i], state);
  }
}

Sgd::Sgd(std::vector<Tensor> params, float lr, float momentum, float weight_decay) : params_(std::move(params)) {
  state_.lr = lr;
  state_.momentum = momentum;
  state_.weight_decay = weight_decay;
  ensure_buffers(params_, state_);
}

void Sgd::step() {
  ensure_buffers(params_, state_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    apply_sgd(params_[i], params_[i].grad(), state_.momentum_buffers[i], state_);
  }
}

void Sgd::zero_grad() { optim::zero_grad(params_); }

Adam::Adam(std::vector<Tensor> params, float lr, float beta1, float beta2, float weight_decay, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
  for (const Tensor& p : params_) {
    first_.emplace_back(p.numel(), 0.0f);
    second_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].values();
    auto grad = params_[i].grad();
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float g = (grad.empty() ? 0.0f : grad[j]) + weight_decay_ * w[j];
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void Adam::zero_grad() { optim::zero_grad(params_); }

double cosine_lr(long epoch, long total, double lr_max, double lr_min) {
  if (total < 1) throw RangeError("cosine_lr: total epochs must be >= 1");
  if (epoch < 0 || epoch > total) {
    throw RangeError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) + "]");
  }
  const double progress = static_cast<double>(epoch) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void zero_grad(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace headsearch::optim
