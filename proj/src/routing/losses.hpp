#pragma once

#include <cstdint>

#include "nn/tensor.hpp"

namespace iopfl::routing {

/// Value and gradient(s) of an unsupervised loss on probability maps.
struct LossGrad {
  double value = 0.0;
  nn::Tensor grad;     // d value / d first argument
  nn::Tensor grad_b;   // d value / d second argument (consistency only)
};

inline constexpr double kEntropyLogFloor = 1e-12;

/// Mean over samples and positions of ||z - z'||^2 across classes.
LossGrad consistency_loss(const nn::Tensor& clean, const nn::Tensor& noisy);

/// Mean over samples and positions of sum_c (max - min) of V^c over the
/// (2d+1)^2 window centred at the position, clipped at the borders. The
/// gradient routes +1 to the first maximiser and -1 to the first minimiser
/// in scan order.
LossGrad shape_loss(const nn::Tensor& probs, std::size_t d);

/// Mean over samples and positions of -sum_c V log(max(V, 1e-12)).
LossGrad entropy_loss(const nn::Tensor& probs);

/// x + eps with eps ~ N(0, sigma^2) i.i.d., seeded.
nn::Tensor perturb(const nn::Tensor& x, std::uint64_t seed, double sigma = 0.5);

}  // namespace iopfl::routing
