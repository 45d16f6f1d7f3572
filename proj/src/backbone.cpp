#include "headsearch/backbone.hpp"

#include <cmath>

#include "headsearch/error.hpp"
#include "headsearch/rng.hpp"

namespace headsearch {

TinyBackbone::TinyBackbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  std::size_t cin = 3;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t cout = config.widths[s];
    if (cout == 0) throw ConfigError("backbone widths must be positive");
    Rng rng = make_rng(seed, s);
    const float bound = 1.0f / std::sqrt(static_cast<float>(cin * 9));
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> w(cout * cin * 9);
    for (float& v : w) v = dist(rng);
    stages_[s] = Stage{Tensor::from_values({cout, cin, 3, 3}, std::move(w), true), Tensor::zeros({cout}, true),
                       Tensor::full({cout}, 1.0f, true), Tensor::zeros({cout}, true), ops::RunningStats::fresh(cout)};
    cin = cout;
  }
}

Tensor TinyBackbone::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("backbone expects [B x 3 x S x S], got " + shape_str(x.shape()));
  if (x.dim(2) != x.dim(3)) throw ShapeError("backbone expects square images, got " + shape_str(x.shape()));
  Tensor y = x;
  for (Stage& st : stages_) {
    y = ops::conv2d(y, st.weight, st.bias, 2, 1);
    y = ops::batchnorm(y, st.gamma, st.beta, st.stats, mode);
    y = ops::activation(y, ops::Activation::ReLU);
  }
  return ops::global_avg_pool2d(y);
}

std::vector<Tensor> TinyBackbone::parameters() {
  std::vector<Tensor> out;
  for (Stage& st : stages_) out.insert(out.end(), {st.weight, st.bias, st.gamma, st.beta});
  return out;
}

std::vector<Tensor> TinyBackbone::buffers() {
  std::vector<Tensor> out;
  for (Stage& st : stages_) out.insert(out.end(), {st.stats.mean, st.stats.var});
  return out;
}

std::size_t TinyBackbone::parameter_count() {
  std::size_t n = 0;
  for (const Tensor& t : parameters()) n += t.numel();
  return n;
}

Tensor backbone_forward(TinyBackbone& backbone, const Tensor& x, Mode mode) { return backbone.forward(x, mode); }

}  // namespace headsearch
