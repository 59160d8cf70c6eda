#pragma once

#include <cstdint>
#include <vector>

#include "nn/tensor.hpp"

namespace iopfl::nn {

/// Integer label maps for a batch, (n, h, w) row-major.
struct LabelBatch {
  std::size_t n = 0, h = 0, w = 0;
  std::vector<std::int32_t> data;

  std::int32_t at(std::size_t b, std::size_t y, std::size_t x) const {
    return data[(b * h + y) * w + x];
  }
  std::size_t plane() const noexcept { return h * w; }
};

/// Channel softmax of a logits batch.
Tensor softmax(const Tensor& logits);

/// Per-pixel argmax over channels; ties go to the lowest class index.
LabelBatch argmax_labels(const Tensor& scores);

struct SupervisedLoss {
  double value = 0.0;
  double cross_entropy = 0.0;
  double dice_loss = 0.0;
  Tensor grad_logits;
};

inline constexpr double kSoftDiceSmooth = 1.0;

/// Pixel-mean cross-entropy plus soft Dice loss (mean over foreground
/// classes, batch-pooled), equally weighted. Gradient is w.r.t. logits.
SupervisedLoss segmentation_loss(const Tensor& logits, const LabelBatch& labels);

}  // namespace iopfl::nn
