#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "headsearch/module.hpp"

namespace headsearch {

enum class FrameworkKind {
  SimSiamLike,  // predictor + stop-gradient negative cosine
  SimCLRLike,   // no predictor, NT-Xent
};

struct Framework {
  FrameworkKind kind = FrameworkKind::SimSiamLike;
  float temperature = 0.5f;

  bool uses_predictor() const { return kind == FrameworkKind::SimSiamLike; }
};

std::string_view framework_name(FrameworkKind kind);
FrameworkKind framework_from_name(std::string_view name);

struct SiameseOutputs {
  Tensor z1, z2;                  // projector outputs
  std::optional<Tensor> p1, p2;   // predictor outputs
};

// Runs both views through the same backbone and heads. Each view is a
// separate batch, so batch-norm statistics are computed per view.
SiameseOutputs siamese_forward(Module& backbone, Module& encoder_head, Module* predictor, const Tensor& x1,
                               const Tensor& x2, Mode mode);

// 0.5 * (D(p1, sg(z2)) + D(p2, sg(z1))), D the negative cosine.
Tensor simsiam_loss(const SiameseOutputs& out);

// Normalized-temperature cross-entropy over the 2B x 2B cosine-similarity
// matrix; the positive of row i is its paired view, the other 2B-2 rows are
// negatives. Averaged over all 2B anchors.
Tensor ntxent_loss(const Tensor& z1, const Tensor& z2, float temperature);

Tensor framework_loss(const Framework& framework, const SiameseOutputs& out);

inline constexpr double kCollapseThreshold = -0.99;
inline constexpr std::size_t kCollapseWindow = 10;

struct CollapseScore {
  bool collapsed = false;
  double mean_tail = 0.0;
};

// collapsed iff the mean of the last `window` losses is strictly below -0.99.
CollapseScore collapse_score(std::span<const double> loss_history, std::size_t window = kCollapseWindow);

}  // namespace headsearch
