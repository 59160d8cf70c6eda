#include "nn/losses.hpp"

#include <cmath>

#include "nn/error.hpp"
#include "nn/kernels.hpp"

namespace iopfl::nn {

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < logits.n(); ++n) {
    kernels::softmax_channels(logits.plane_ptr(n, 0), logits.c(), logits.plane(),
                              p.plane_ptr(n, 0));
  }
  return p;
}

LabelBatch argmax_labels(const Tensor& scores) {
  LabelBatch out{scores.n(), scores.h(), scores.w(), {}};
  out.data.resize(scores.n() * scores.plane());
  const std::size_t P = scores.plane();
  for (std::size_t n = 0; n < scores.n(); ++n) {
    const double* base = scores.plane_ptr(n, 0);
    for (std::size_t p = 0; p < P; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < scores.c(); ++c) {
        if (base[c * P + p] > base[best * P + p]) best = c;
      }
      out.data[n * P + p] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

SupervisedLoss segmentation_loss(const Tensor& logits, const LabelBatch& labels) {
  const std::size_t N = logits.n(), C = logits.c(), P = logits.plane();
  if (labels.n != N || labels.h != logits.h() || labels.w != logits.w()) {
    fail(ErrorKind::kShape, "labels do not match logits shape " + shape_string(logits.shape()));
  }
  const Tensor probs = softmax(logits);
  const double M = static_cast<double>(N * P);
  SupervisedLoss out;
  out.grad_logits = Tensor(logits.shape());

  // dL/dprobs for the Dice part, dL/dlogits directly for cross-entropy.
  Tensor grad_probs(logits.shape());
  double ce = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const auto y = static_cast<std::size_t>(labels.data[n * P + p]);
      if (y >= C) fail(ErrorKind::kShape, "label out of range");
      ce -= std::log(std::max(probs.at(n, y, p / logits.w(), p % logits.w()), 1e-300));
      for (std::size_t c = 0; c < C; ++c) {
        const double target = c == y ? 1.0 : 0.0;
        out.grad_logits.plane_ptr(n, c)[p] = (probs.plane_ptr(n, c)[p] - target) / M;
      }
    }
  }
  out.cross_entropy = ce / M;

  const double fg = static_cast<double>(C - 1);
  double dice_sum = 0.0;
  for (std::size_t c = 1; c < C; ++c) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* pc = probs.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        const double g = labels.data[n * P + p] == static_cast<std::int32_t>(c) ? 1.0 : 0.0;
        inter += pc[p] * g;
        psum += pc[p];
        gsum += g;
      }
    }
    const double num = 2.0 * inter + kSoftDiceSmooth;
    const double den = psum + gsum + kSoftDiceSmooth;
    dice_sum += num / den;
    for (std::size_t n = 0; n < N; ++n) {
      double* gp = grad_probs.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        const double g = labels.data[n * P + p] == static_cast<std::int32_t>(c) ? 1.0 : 0.0;
        gp[p] = -(2.0 * g / den - num / (den * den)) / fg;
      }
    }
  }
  out.dice_loss = 1.0 - dice_sum / fg;
  out.value = out.cross_entropy + out.dice_loss;
  for (std::size_t n = 0; n < N; ++n) {
    kernels::softmax_channels_backward(probs.plane_ptr(n, 0), grad_probs.plane_ptr(n, 0), C, P,
                                       out.grad_logits.plane_ptr(n, 0));
  }
  return out;
}

}  // namespace iopfl::nn
