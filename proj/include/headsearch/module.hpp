#pragma once

#include <vector>

#include "headsearch/ops.hpp"
#include "headsearch/tensor.hpp"

namespace headsearch {

using ops::Mode;

// A differentiable building block with trainable parameters and
// non-trainable buffers (batch-norm running statistics).
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual std::vector<Tensor> parameters() = 0;
  virtual std::vector<Tensor> buffers() = 0;
};

}  // namespace headsearch
