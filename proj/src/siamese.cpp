#include "headsearch/siamese.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "headsearch/error.hpp"

namespace headsearch {

std::string_view framework_name(FrameworkKind kind) {
  return kind == FrameworkKind::SimSiamLike ? "simsiam" : "simclr";
}

FrameworkKind framework_from_name(std::string_view name) {
  if (name == "simsiam") return FrameworkKind::SimSiamLike;
  if (name == "simclr") return FrameworkKind::SimCLRLike;
  throw ConfigError("unknown framework '" + std::string(name) + "'");
}

SiameseOutputs siamese_forward(Module& backbone, Module& encoder_head, Module* predictor, const Tensor& x1,
                               const Tensor& x2, Mode mode) {
  if (x1.shape() != x2.shape()) {
    throw ShapeError("siamese_forward: view shapes differ " + shape_str(x1.shape()) + " vs " + shape_str(x2.shape()));
  }
  SiameseOutputs out;
  out.z1 = encoder_head.forward(backbone.forward(x1, mode), mode);
  out.z2 = encoder_head.forward(backbone.forward(x2, mode), mode);
  if (predictor) {
    out.p1 = predictor->forward(out.z1, mode);
    out.p2 = predictor->forward(out.z2, mode);
  }
  return out;
}

Tensor simsiam_loss(const SiameseOutputs& out) {
  if (!out.p1 || !out.p2) throw ConfigError("simsiam_loss requires predictor outputs");
  Tensor a = ops::negative_cosine(*out.p1, ops::stopgrad(out.z2));
  Tensor b = ops::negative_cosine(*out.p2, ops::stopgrad(out.z1));
  return ops::scale(ops::add(a, b), 0.5f);
}

Tensor ntxent_loss(const Tensor& z1, const Tensor& z2, float temperature) {
  if (!(temperature > 0.0f)) throw ConfigError("ntxent_loss: temperature must be positive");
  if (z1.shape() != z2.shape() || z1.rank() != 2) {
    throw ShapeError("ntxent_loss: views must share a [B x d] shape");
  }
  const std::size_t batch = z1.dim(0);
  if (batch < 2) throw DegenerateBatchError("ntxent_loss: need at least 2 samples per view for negatives");
  Tensor z = ops::l2_normalize_rows(ops::concat_rows(z1, z2));
  Tensor logits = ops::scale(ops::matmul_nt(z, z), 1.0f / temperature);
  logits = ops::fill_diagonal(logits, -std::numeric_limits<float>::infinity());
  std::vector<std::int32_t> targets(2 * batch);
  for (std::size_t i = 0; i < batch; ++i) {
    targets[i] = static_cast<std::int32_t>(i + batch);
    targets[i + batch] = static_cast<std::int32_t>(i);
  }
  return ops::cross_entropy(logits, targets);
}

Tensor framework_loss(const Framework& framework, const SiameseOutputs& out) {
  if (framework.kind == FrameworkKind::SimSiamLike) return simsiam_loss(out);
  return ntxent_loss(out.z1, out.z2, framework.temperature);
}

CollapseScore collapse_score(std::span<const double> loss_history, std::size_t window) {
  if (loss_history.empty()) throw RangeError("collapse_score: empty loss history");
  if (window == 0 || loss_history.size() < window) {
    throw RangeError("collapse_score: history of " + std::to_string(loss_history.size()) +
                     " epochs is shorter than window " + std::to_string(window));
  }
  auto tail = loss_history.subspan(loss_history.size() - window);
  const double m = std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(window);
  return CollapseScore{m < kCollapseThreshold, m};
}

}  // namespace headsearch
