#include "headsearch/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gemm.hpp"
#include "headsearch/error.hpp"
#include "headsearch/tape.hpp"

namespace headsearch::ops {

using detail::gemm;
using detail::Trans;

namespace {

Tape* recorder(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

void expect_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

RunningStats RunningStats::fresh(std::size_t features) {
  return RunningStats{Tensor::zeros({features}), Tensor::full({features}, 1.0f)};
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  expect_rank(x, 2, "linear");
  expect_rank(weight, 2, "linear");
  const std::size_t batch = x.dim(0), din = x.dim(1), dout = weight.dim(1);
  if (weight.dim(0) != din || bias.shape() != Shape{dout}) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  Tensor y = Tensor::zeros({batch, dout});
  auto yv = y.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < batch; ++i) std::copy(bv.begin(), bv.end(), yv.begin() + i * dout);
  gemm(x.values().data(), Trans::No, weight.values().data(), Trans::No, yv.data(), batch, din, dout, true);

  if (Tape* tape = recorder({&x, &weight, &bias})) {
    tape->record(y, [x, weight, bias, batch, din, dout](std::span<const float> gy) mutable {
      if (x.requires_grad()) {
        gemm(gy.data(), Trans::No, weight.values().data(), Trans::Yes, x.grad_buffer().data(), batch, dout, din, true);
      }
      if (weight.requires_grad()) {
        gemm(x.values().data(), Trans::Yes, gy.data(), Trans::No, weight.grad_buffer().data(), din, batch, dout, true);
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t i = 0; i < batch; ++i)
          for (std::size_t j = 0; j < dout; ++j) gb[j] += gy[i * dout + j];
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul");
  expect_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor y = Tensor::zeros({m, n});
  gemm(a.values().data(), Trans::No, b.values().data(), Trans::No, y.values().data(), m, k, n, false);
  if (Tape* tape = recorder({&a, &b})) {
    tape->record(y, [a, b, m, k, n](std::span<const float> gy) mutable {
      if (a.requires_grad()) gemm(gy.data(), Trans::No, b.values().data(), Trans::Yes, a.grad_buffer().data(), m, n, k, true);
      if (b.requires_grad()) gemm(a.values().data(), Trans::Yes, gy.data(), Trans::No, b.grad_buffer().data(), k, m, n, true);
    });
  }
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul_nt");
  expect_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor y = Tensor::zeros({m, n});
  gemm(a.values().data(), Trans::No, b.values().data(), Trans::Yes, y.values().data(), m, k, n, false);
  if (Tape* tape = recorder({&a, &b})) {
    tape->record(y, [a, b, m, k, n](std::span<const float> gy) mutable {
      // dA = gY B, dB = gY^T A
      if (a.requires_grad()) gemm(gy.data(), Trans::No, b.values().data(), Trans::No, a.grad_buffer().data(), m, n, k, true);
      if (b.requires_grad()) gemm(gy.data(), Trans::Yes, a.values().data(), Trans::No, b.grad_buffer().data(), n, m, k, true);
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  Tensor y = Tensor::zeros(a.shape());
  auto yv = y.values();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
  if (Tape* tape = recorder({&a, &b})) {
    tape->record(y, [a, b](std::span<const float> gy) mutable {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  Tensor y = Tensor::zeros(a.shape());
  auto yv = y.values();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
  if (Tape* tape = recorder({&a, &b})) {
    tape->record(y, [a, b](std::span<const float> gy) mutable {
      if (a.requires_grad()) {
        auto g = a.grad_buffer();
        auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad_buffer();
        auto av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * av[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor y = Tensor::zeros(x.shape());
  auto yv = y.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] * factor;
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, factor](std::span<const float> gy) mutable {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * factor;
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double acc = 0.0;
  for (float v : xv) acc += v;
  Tensor y = Tensor::scalar(static_cast<float>(acc));
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x](std::span<const float> gy) mutable {
      auto g = x.grad_buffer();
      for (float& v : g) v += gy[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode,
                 float momentum, float eps) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batchnorm: expected [B x C] or [B x C x H x W], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t spatial = x.numel() / (batch * channels);
  const Shape feat{channels};
  if (gamma.shape() != feat || beta.shape() != feat || stats.mean.shape() != feat || stats.var.shape() != feat) {
    throw ShapeError("batchnorm: parameters must have shape " + shape_str(feat));
  }
  const std::size_t count = batch * spatial;
  if (mode == Mode::Train && count < 2) {
    throw DegenerateBatchError("batchnorm: train mode needs at least 2 values per feature, got batch of " +
                               std::to_string(batch));
  }

  auto xv = x.values();
  std::vector<float> mu(channels), inv_std(channels);
  if (mode == Mode::Train) {
    auto rm = stats.mean.values();
    auto rv = stats.var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* row = xv.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += row[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* row = xv.data() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) ss += (row[i] - m) * (row[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(m);
      rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(unbiased);
    }
  } else {
    auto rm = stats.mean.values();
    auto rv = stats.var.values();
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0f / std::sqrt(rv[c] + eps);
    }
  }

  Tensor y = Tensor::zeros(x.shape());
  std::vector<float> xhat(x.numel());
  auto yv = y.values();
  auto gv = gamma.values(), bv = beta.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const float h = (xv[base + i] - mu[c]) * inv_std[c];
        xhat[base + i] = h;
        yv[base + i] = gv[c] * h + bv[c];
      }
    }
  }

  if (Tape* tape = recorder({&x, &gamma, &beta})) {
    tape->record(y, [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, spatial,
                     count, train = mode == Mode::Train](std::span<const float> gy) mutable {
      auto gv = gamma.values();
      std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (b * channels + c) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) {
            sum_dy[c] += gy[base + i];
            sum_dy_xhat[c] += gy[base + i] * xhat[base + i];
          }
        }
      }
      if (gamma.requires_grad()) {
        auto g = gamma.grad_buffer();
        for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<float>(sum_dy_xhat[c]);
      }
      if (beta.requires_grad()) {
        auto g = beta.grad_buffer();
        for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<float>(sum_dy[c]);
      }
      if (!x.requires_grad()) return;
      auto gx = x.grad_buffer();
      const double n = static_cast<double>(count);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (b * channels + c) * spatial;
          const double k = static_cast<double>(gv[c]) * inv_std[c];
          for (std::size_t i = 0; i < spatial; ++i) {
            if (train) {
              gx[base + i] += static_cast<float>(
                  k * (gy[base + i] - sum_dy[c] / n - xhat[base + i] * sum_dy_xhat[c] / n));
            } else {
              gx[base + i] += static_cast<float>(k * gy[base + i]);
            }
          }
        }
      }
    });
  }
  return y;
}

namespace {

float act_forward(float x, Activation kind) {
  switch (kind) {
    case Activation::ReLU:
      return x <= 0.0f ? 0.0f : x;  // NaN passes through
    case Activation::Hardswish:
      if (x <= -3.0f) return 0.0f;
      if (x >= 3.0f) return x;
      return x * (x + 3.0f) / 6.0f;
    case Activation::SiLU:
      return x / (1.0f + std::exp(-x));
    case Activation::ELU:
      return x > 0.0f ? x : std::expm1(x);
  }
  return x;
}

// Subgradient 0 at the kinks of ReLU (0) and Hardswish (+-3).
float act_derivative(float x, Activation kind) {
  switch (kind) {
    case Activation::ReLU:
      return x > 0.0f ? 1.0f : 0.0f;
    case Activation::Hardswish:
      if (x == 3.0f || x == -3.0f) return 0.0f;
      if (x < -3.0f) return 0.0f;
      if (x > 3.0f) return 1.0f;
      return (2.0f * x + 3.0f) / 6.0f;
    case Activation::SiLU: {
      const float s = 1.0f / (1.0f + std::exp(-x));
      return s * (1.0f + x * (1.0f - s));
    }
    case Activation::ELU:
      return x > 0.0f ? 1.0f : std::exp(x);
  }
  return 1.0f;
}

}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  Tensor y = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = act_forward(xv[i], kind);
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, kind](std::span<const float> gy) mutable {
      auto xv = x.values();
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * act_derivative(xv[i], kind);
    });
  }
  return y;
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::ReLU: return "relu";
    case Activation::Hardswish: return "hardswish";
    case Activation::SiLU: return "silu";
    case Activation::ELU: return "elu";
  }
  return "?";
}

Tensor pool1d(const Tensor& x, Pool kind) {
  expect_rank(x, 2, "pool1d");
  const std::size_t batch = x.dim(0), d = x.dim(1);
  Tensor y = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto yv = y.values();
  // For max pooling, the flat source index that won each output position.
  std::vector<std::size_t> winner;
  if (kind == Pool::Max) winner.resize(x.numel());
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t row = b * d;
    for (std::size_t i = 0; i < d; ++i) {
      if (kind == Pool::Avg) {
        float s = xv[row + i];
        if (i > 0) s += xv[row + i - 1];
        if (i + 1 < d) s += xv[row + i + 1];
        yv[row + i] = s / 3.0f;
      } else {
        float best = kNegInf;
        std::size_t arg = row + i;
        for (std::size_t j = (i > 0 ? i - 1 : 0); j <= std::min(i + 1, d - 1); ++j) {
          if (xv[row + j] > best) {
            best = xv[row + j];
            arg = row + j;
          }
        }
        yv[row + i] = best;
        winner[row + i] = arg;
      }
    }
  }
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, kind, winner = std::move(winner), batch, d](std::span<const float> gy) mutable {
      auto g = x.grad_buffer();
      if (kind == Pool::Max) {
        for (std::size_t i = 0; i < gy.size(); ++i) g[winner[i]] += gy[i];
        return;
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t row = b * d;
        for (std::size_t i = 0; i < d; ++i) {
          const float share = gy[row + i] / 3.0f;
          g[row + i] += share;
          if (i > 0) g[row + i - 1] += share;
          if (i + 1 < d) g[row + i + 1] += share;
        }
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& v) {
  expect_rank(v, 1, "softmax");
  auto vv = v.values();
  for (float e : vv) {
    if (std::isnan(e)) throw NumericError("softmax: NaN input");
  }
  const float mx = *std::max_element(vv.begin(), vv.end());
  Tensor y = Tensor::zeros(v.shape());
  auto yv = y.values();
  double total = 0.0;
  for (std::size_t i = 0; i < vv.size(); ++i) {
    yv[i] = std::exp(vv[i] - mx);
    total += yv[i];
  }
  for (float& e : yv) e = static_cast<float>(e / total);
  if (Tape* tape = recorder({&v})) {
    tape->record(y, [v, y](std::span<const float> gy) mutable {
      auto yv = y.values();
      double dot = 0.0;
      for (std::size_t i = 0; i < yv.size(); ++i) dot += gy[i] * yv[i];
      auto g = v.grad_buffer();
      for (std::size_t i = 0; i < yv.size(); ++i) g[i] += static_cast<float>(yv[i] * (gy[i] - dot));
    });
  }
  return y;
}

Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights) {
  expect_rank(weights, 1, "weighted_sum");
  if (terms.empty() || weights.dim(0) != terms.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms but weights " +
                     shape_str(weights.shape()));
  }
  for (const Tensor& t : terms) expect_same_shape(t, terms.front(), "weighted_sum");
  Tensor y = Tensor::zeros(terms.front().shape());
  auto yv = y.values();
  auto wv = weights.values();
  for (std::size_t k = 0; k < terms.size(); ++k) {
    auto tv = terms[k].values();
    const float w = wv[k];
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += w * tv[i];
  }
  Tape* tape = Tape::active();
  bool needs = tape && weights.requires_grad();
  for (const Tensor& t : terms) needs = needs || (tape && t.requires_grad());
  if (needs) {
    tape->record(y, [ts = std::vector<Tensor>(terms.begin(), terms.end()), weights](std::span<const float> gy) mutable {
      auto wv = weights.values();
      std::span<float> gw;
      if (weights.requires_grad()) gw = weights.grad_buffer();
      for (std::size_t k = 0; k < ts.size(); ++k) {
        auto tv = ts[k].values();
        if (!gw.empty()) {
          double dot = 0.0;
          for (std::size_t i = 0; i < tv.size(); ++i) dot += gy[i] * tv[i];
          gw[k] += static_cast<float>(dot);
        }
        if (ts[k].requires_grad()) {
          auto g = ts[k].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += wv[k] * gy[i];
        }
      }
    });
  }
  return y;
}

Tensor negative_cosine(const Tensor& p, const Tensor& z) {
  expect_rank(p, 2, "negative_cosine");
  expect_same_shape(p, z, "negative_cosine");
  const std::size_t batch = p.dim(0), d = p.dim(1);
  auto pv = p.values(), zv = z.values();
  std::vector<double> pnorm(batch), znorm(batch), cosine(batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double pp = 0.0, zz = 0.0, pz = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double a = pv[b * d + i], c = zv[b * d + i];
      pp += a * a;
      zz += c * c;
      pz += a * c;
    }
    if (pp == 0.0 || zz == 0.0) {
      throw ZeroNormError("negative_cosine: row " + std::to_string(b) + " has zero norm");
    }
    pnorm[b] = std::sqrt(pp);
    znorm[b] = std::sqrt(zz);
    cosine[b] = pz / (pnorm[b] * znorm[b]);
    total += cosine[b];
  }
  Tensor y = Tensor::scalar(static_cast<float>(-total / static_cast<double>(batch)));
  if (Tape* tape = recorder({&p, &z})) {
    tape->record(y, [p, z, pnorm = std::move(pnorm), znorm = std::move(znorm), cosine = std::move(cosine), batch,
                     d](std::span<const float> gy) mutable {
      const double scale_out = -static_cast<double>(gy[0]) / static_cast<double>(batch);
      auto pv = p.values(), zv = z.values();
      // d cos / d p = z/(|p||z|) - cos * p/|p|^2
      if (p.requires_grad()) {
        auto g = p.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = b * d + i;
            const double dc = zv[k] / (pnorm[b] * znorm[b]) - cosine[b] * pv[k] / (pnorm[b] * pnorm[b]);
            g[k] += static_cast<float>(scale_out * dc);
          }
        }
      }
      if (z.requires_grad()) {
        auto g = z.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = b * d + i;
            const double dc = pv[k] / (pnorm[b] * znorm[b]) - cosine[b] * zv[k] / (znorm[b] * znorm[b]);
            g[k] += static_cast<float>(scale_out * dc);
          }
        }
      }
    });
  }
  return y;
}

Tensor l2_normalize_rows(const Tensor& x) {
  expect_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  auto xv = x.values();
  Tensor y = Tensor::zeros(x.shape());
  auto yv = y.values();
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d; ++i) ss += static_cast<double>(xv[r * d + i]) * xv[r * d + i];
    if (ss == 0.0) throw ZeroNormError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    norms[r] = std::sqrt(ss);
    for (std::size_t i = 0; i < d; ++i) yv[r * d + i] = static_cast<float>(xv[r * d + i] / norms[r]);
  }
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, y, norms = std::move(norms), rows, d](std::span<const float> gy) mutable {
      auto yv = y.values();
      auto g = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += gy[r * d + i] * yv[r * d + i];
        for (std::size_t i = 0; i < d; ++i) {
          g[r * d + i] += static_cast<float>((gy[r * d + i] - dot * yv[r * d + i]) / norms[r]);
        }
      }
    });
  }
  return y;
}

Tensor stopgrad(const Tensor& x) { return x.detach(); }

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "concat_rows");
  expect_rank(b, 2, "concat_rows");
  if (a.dim(1) != b.dim(1)) throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor y = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1)});
  auto yv = y.values();
  std::copy(a.values().begin(), a.values().end(), yv.begin());
  std::copy(b.values().begin(), b.values().end(), yv.begin() + static_cast<std::ptrdiff_t>(a.numel()));
  if (Tape* tape = recorder({&a, &b})) {
    tape->record(y, [a, b](std::span<const float> gy) mutable {
      if (a.requires_grad()) {
        auto g = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad_buffer();
        const std::size_t off = a.numel();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[off + i];
      }
    });
  }
  return y;
}

Tensor fill_diagonal(const Tensor& x, float value) {
  expect_rank(x, 2, "fill_diagonal");
  const std::size_t n = x.dim(0);
  if (x.dim(1) != n) throw ShapeError("fill_diagonal: matrix must be square, got " + shape_str(x.shape()));
  Tensor y = x.detach();
  auto yv = y.values();
  for (std::size_t i = 0; i < n; ++i) yv[i * n + i] = value;
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, n](std::span<const float> gy) mutable {
      auto g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (i % (n + 1) != 0) g[i] += gy[i];
      }
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  expect_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + shape_str(logits.shape()));
  }
  auto lv = logits.values();
  std::vector<float> probs(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) throw RangeError("cross_entropy: label out of range");
    const float* row = lv.data() + r * classes;
    const float mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[r * classes + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - mx) / z);
    }
    total += -(static_cast<double>(row[label]) - mx - std::log(z));
  }
  Tensor y = Tensor::scalar(static_cast<float>(total / static_cast<double>(rows)));
  if (Tape* tape = recorder({&logits})) {
    tape->record(y, [logits, probs = std::move(probs), lab = std::vector<std::int32_t>(labels.begin(), labels.end()),
                     rows, classes](std::span<const float> gy) mutable {
      auto g = logits.grad_buffer();
      const float s = gy[0] / static_cast<float>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
          const float target = static_cast<std::size_t>(lab[r]) == c ? 1.0f : 0.0f;
          g[r * classes + c] += s * (probs[r * classes + c] - target);
        }
      }
    });
  }
  return y;
}

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t col_rows() const { return cin * k * k; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const float* img, const ConvGeometry& g, float* col) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const std::size_t row = (c * g.k + ki) * g.k + kj;
        float* out = col + row * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            out[oy * g.ow + ox] = inside ? img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvGeometry& g, float* img) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const std::size_t row = (c * g.k + ki) * g.k + kj;
        const float* in = col + row * g.col_cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += in[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  expect_rank(x, 4, "conv2d");
  expect_rank(weight, 4, "conv2d");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  if (weight.dim(1) != g.cin || weight.dim(3) != g.k || bias.shape() != Shape{g.cout}) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  if (g.h + 2 * padding < g.k || g.w + 2 * padding < g.k) throw ShapeError("conv2d: kernel larger than padded input");
  g.oh = (g.h + 2 * padding - g.k) / stride + 1;
  g.ow = (g.w + 2 * padding - g.k) / stride + 1;

  Tensor y = Tensor::zeros({g.batch, g.cout, g.oh, g.ow});
  const std::size_t col_size = g.col_rows() * g.col_cols();
  std::vector<float> cols(g.batch * col_size);
  auto xv = x.values();
  auto yv = y.values();
  auto bv = bias.values();
  for (std::size_t b = 0; b < g.batch; ++b) {
    float* col = cols.data() + b * col_size;
    im2col(xv.data() + b * g.cin * g.h * g.w, g, col);
    float* out = yv.data() + b * g.cout * g.col_cols();
    for (std::size_t c = 0; c < g.cout; ++c) std::fill_n(out + c * g.col_cols(), g.col_cols(), bv[c]);
    gemm(weight.values().data(), Trans::No, col, Trans::No, out, g.cout, g.col_rows(), g.col_cols(), true);
  }

  if (Tape* tape = recorder({&x, &weight, &bias})) {
    tape->record(y, [x, weight, bias, g, cols = std::move(cols), col_size](std::span<const float> gy) mutable {
      const std::size_t out_size = g.cout * g.col_cols();
      if (weight.requires_grad()) {
        auto gw = weight.grad_buffer();
        for (std::size_t b = 0; b < g.batch; ++b) {
          gemm(gy.data() + b * out_size, Trans::No, cols.data() + b * col_size, Trans::Yes, gw.data(), g.cout,
               g.col_cols(), g.col_rows(), true);
        }
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t c = 0; c < g.cout; ++c) {
            const float* row = gy.data() + b * out_size + c * g.col_cols();
            double s = 0.0;
            for (std::size_t i = 0; i < g.col_cols(); ++i) s += row[i];
            gb[c] += static_cast<float>(s);
          }
        }
      }
      if (x.requires_grad()) {
        auto gx = x.grad_buffer();
        std::vector<float> dcol(col_size);
        for (std::size_t b = 0; b < g.batch; ++b) {
          gemm(weight.values().data(), Trans::Yes, gy.data() + b * out_size, Trans::No, dcol.data(), g.col_rows(),
               g.cout, g.col_cols(), false);
          col2im_add(dcol.data(), g, gx.data() + b * g.cin * g.h * g.w);
        }
      }
    });
  }
  return y;
}

Tensor global_avg_pool2d(const Tensor& x) {
  expect_rank(x, 4, "global_avg_pool2d");
  const std::size_t batch = x.dim(0), channels = x.dim(1), spatial = x.dim(2) * x.dim(3);
  Tensor y = Tensor::zeros({batch, channels});
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < batch * channels; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < spatial; ++j) s += xv[i * spatial + j];
    yv[i] = static_cast<float>(s / static_cast<double>(spatial));
  }
  if (Tape* tape = recorder({&x})) {
    tape->record(y, [x, batch, channels, spatial](std::span<const float> gy) mutable {
      auto g = x.grad_buffer();
      const float inv = 1.0f / static_cast<float>(spatial);
      for (std::size_t i = 0; i < batch * channels; ++i) {
        for (std::size_t j = 0; j < spatial; ++j) g[i * spatial + j] += gy[i] * inv;
      }
    });
  }
  return y;
}

}  // namespace headsearch::ops
