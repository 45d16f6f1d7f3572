#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "headsearch/tensor.hpp"

namespace headsearch {

// Receives the gradient of the recorded output and accumulates into the
// gradients of the inputs it captured.
using BackwardRule = std::function<void(std::span<const float> output_grad)>;

// Records differentiable operations in execution order. Constructing a Tape
// makes it the active tape of the calling thread until it is destroyed; ops
// executed with no active tape (or with no grad-requiring input) are not
// recorded and yield constant results.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  // Marks `output` as produced by this tape and stores its backward rule.
  void record(Tensor& output, BackwardRule rule);

  // Reverse sweep from a scalar loss recorded on this tape. Leaf gradients
  // accumulate across calls; intermediate gradients are reset per call.
  void backward(const Tensor& loss);

 private:
  struct Node {
    Tensor output;
    BackwardRule rule;
  };

  std::uint64_t id_;
  Tape* previous_;
  std::vector<Node> nodes_;
};

// Backward through the tape that recorded `loss`, which must be the active one.
void backward(const Tensor& loss);

// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace headsearch
