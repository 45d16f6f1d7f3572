#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "headsearch/tensor.hpp"

// Differentiable primitives. Every op computes its result eagerly; when a
// tape is active and some input requires a gradient, the op records its
// backward rule on that tape.
namespace headsearch::ops {

enum class Mode { Train, Eval };

enum class Activation { ReLU, Hardswish, SiLU, ELU };
enum class Pool { Max, Avg };

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

// Running mean/variance of a batch-norm layer, one entry per feature.
struct RunningStats {
  Tensor mean;
  Tensor var;

  static RunningStats fresh(std::size_t features);
};

// y = x W + b with x [B x d_in], W [d_in x d_out], b [d_out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T with a [m x k], b [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Normalizes over every axis except axis 1 (features/channels). Accepts
// [B x C] and [B x C x H x W]. Train mode uses batch statistics and updates
// `stats`; eval mode uses `stats`.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode,
                 float momentum = kBatchNormMomentum, float eps = kBatchNormEps);

Tensor activation(const Tensor& x, Activation kind);

// Window 3, stride 1, zero padding 1 along each row of a [B x d] tensor.
// Average counts pad positions; max treats them as -inf.
Tensor pool1d(const Tensor& x, Pool kind);

// Softmax of a rank-1 tensor, stabilized by max subtraction.
Tensor softmax(const Tensor& v);

// sum_k weights[k] * terms[k]; all terms share one shape, weights is [K].
Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights);

// Mean over rows of -cos(p_i, z_i). Throws ZeroNormError on a zero row.
Tensor negative_cosine(const Tensor& p, const Tensor& z);

Tensor l2_normalize_rows(const Tensor& x);

// Value-identical tensor that is not connected to any tape.
Tensor stopgrad(const Tensor& x);

Tensor concat_rows(const Tensor& a, const Tensor& b);

// Copy of a square matrix with its diagonal overwritten by `value`; no
// gradient flows through the overwritten entries.
Tensor fill_diagonal(const Tensor& x, float value);

// Mean cross-entropy of logits [N x C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

// x [B x Cin x H x W], weight [Cout x Cin x k x k], bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

// [B x C x H x W] -> [B x C].
Tensor global_avg_pool2d(const Tensor& x);

std::string_view activation_name(Activation kind);

}  // namespace headsearch::ops
