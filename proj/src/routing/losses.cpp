#include "routing/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nn/error.hpp"
#include "nn/rng.hpp"

namespace iopfl::routing {

using nn::Tensor;

LossGrad consistency_loss(const Tensor& clean, const Tensor& noisy) {
  if (!clean.same_shape(noisy)) fail(ErrorKind::kShape, "consistency loss: shape mismatch");
  const double M = static_cast<double>(clean.n() * clean.plane());
  LossGrad out{0.0, Tensor(clean.shape()), Tensor(clean.shape())};
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = clean[i] - noisy[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / M;
    out.grad_b[i] = -2.0 * d / M;
  }
  out.value /= M;
  return out;
}

LossGrad shape_loss(const Tensor& probs, std::size_t d) {
  if (d < 1) fail(ErrorKind::kConfig, "shape loss radius must be at least 1");
  const std::size_t N = probs.n(), C = probs.c(), H = probs.h(), W = probs.w();
  const double M = static_cast<double>(N * H * W);
  LossGrad out{0.0, Tensor(probs.shape()), Tensor()};
  const long r = static_cast<long>(d);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* v = probs.plane_ptr(n, c);
      double* g = out.grad.plane_ptr(n, c);
      for (long y = 0; y < static_cast<long>(H); ++y) {
        const std::size_t y0 = static_cast<std::size_t>(std::max(0L, y - r));
        const std::size_t y1 = static_cast<std::size_t>(std::min<long>(H - 1, y + r));
        for (long x = 0; x < static_cast<long>(W); ++x) {
          const std::size_t x0 = static_cast<std::size_t>(std::max(0L, x - r));
          const std::size_t x1 = static_cast<std::size_t>(std::min<long>(W - 1, x + r));
          std::size_t imax = y0 * W + x0, imin = imax;
          for (std::size_t yy = y0; yy <= y1; ++yy) {
            for (std::size_t xx = x0; xx <= x1; ++xx) {
              const std::size_t i = yy * W + xx;
              if (v[i] > v[imax]) imax = i;
              if (v[i] < v[imin]) imin = i;
            }
          }
          out.value += v[imax] - v[imin];
          g[imax] += 1.0 / M;
          g[imin] -= 1.0 / M;
        }
      }
    }
  }
  out.value /= M;
  return out;
}

LossGrad entropy_loss(const Tensor& probs) {
  const double M = static_cast<double>(probs.n() * probs.plane());
  LossGrad out{0.0, Tensor(probs.shape()), Tensor()};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double v = probs[i];
    if (v > kEntropyLogFloor) {
      const double lg = std::log(v);
      out.value -= v * lg;
      out.grad[i] = -(lg + 1.0) / M;
    } else {
      const double lg = std::log(kEntropyLogFloor);
      out.value -= v * lg;
      out.grad[i] = -lg / M;
    }
  }
  out.value /= M;
  return out;
}

Tensor perturb(const Tensor& x, std::uint64_t seed, double sigma) {
  Tensor out = x;
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out.raw()) v += sigma * rng.normal();
  return out;
}

}  // namespace iopfl::routing
