#include "nn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace iopfl::nn::kernels {
namespace {

// Valid output range [lo, hi) along one axis for kernel tap t with padding p.
inline void tap_range(std::size_t extent, std::size_t t, std::size_t p, std::size_t& lo,
                      std::size_t& hi) {
  lo = t < p ? p - t : 0;
  hi = t > p ? extent - (t - p) : extent;
}

}  // namespace

void conv_forward(const ConvGeom& g, const double* in, const double* kernel, const double* bias,
                  double* out) {
  const std::size_t hw = g.height * g.width;
  const std::size_t kk = g.ksize * g.ksize;
  const std::size_t pad = g.ksize / 2;
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    double* o = out + co * hw;
    std::fill(o, o + hw, bias ? bias[co] : 0.0);
    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
      const double* src = in + ci * hw;
      const double* k = kernel + (co * g.in_ch + ci) * kk;
      for (std::size_t ky = 0; ky < g.ksize; ++ky) {
        std::size_t y0, y1;
        tap_range(g.height, ky, pad, y0, y1);
        for (std::size_t kx = 0; kx < g.ksize; ++kx) {
          const double wv = k[ky * g.ksize + kx];
          if (wv == 0.0) continue;
          std::size_t x0, x1;
          tap_range(g.width, kx, pad, x0, x1);
          for (std::size_t y = y0; y < y1; ++y) {
            double* orow = o + y * g.width;
            const double* irow = src + (y + ky - pad) * g.width;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x + kx - pad];
          }
        }
      }
    }
  }
}

void conv_backward_input(const ConvGeom& g, const double* grad_out, const double* kernel,
                         double* grad_in) {
  const std::size_t hw = g.height * g.width;
  const std::size_t kk = g.ksize * g.ksize;
  const std::size_t pad = g.ksize / 2;
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    double* gi = grad_in + ci * hw;
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      const double* go = grad_out + co * hw;
      const double* k = kernel + (co * g.in_ch + ci) * kk;
      for (std::size_t ky = 0; ky < g.ksize; ++ky) {
        std::size_t y0, y1;
        tap_range(g.height, ky, pad, y0, y1);
        for (std::size_t kx = 0; kx < g.ksize; ++kx) {
          const double wv = k[ky * g.ksize + kx];
          if (wv == 0.0) continue;
          std::size_t x0, x1;
          tap_range(g.width, kx, pad, x0, x1);
          for (std::size_t y = y0; y < y1; ++y) {
            const double* grow = go + y * g.width;
            double* irow = gi + (y + ky - pad) * g.width;
            for (std::size_t x = x0; x < x1; ++x) irow[x + kx - pad] += wv * grow[x];
          }
        }
      }
    }
  }
}

void conv_backward_weight(const ConvGeom& g, const double* grad_out, const double* in,
                          double* grad_kernel, double* grad_bias) {
  const std::size_t hw = g.height * g.width;
  const std::size_t kk = g.ksize * g.ksize;
  const std::size_t pad = g.ksize / 2;
  std::vector<double> lanes(g.width);
  for (std::size_t co = 0; co < g.out_ch; ++co) {
    const double* go = grad_out + co * hw;
    if (grad_bias) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += go[i];
      grad_bias[co] += s;
    }
    for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
      const double* src = in + ci * hw;
      double* gk = grad_kernel + (co * g.in_ch + ci) * kk;
      for (std::size_t ky = 0; ky < g.ksize; ++ky) {
        std::size_t y0, y1;
        tap_range(g.height, ky, pad, y0, y1);
        for (std::size_t kx = 0; kx < g.ksize; ++kx) {
          std::size_t x0, x1;
          tap_range(g.width, kx, pad, x0, x1);
          // Column-wise partial sums vectorize; the final reduction order is fixed.
          std::fill(lanes.begin(), lanes.end(), 0.0);
          for (std::size_t y = y0; y < y1; ++y) {
            const double* grow = go + y * g.width;
            const double* irow = src + (y + ky - pad) * g.width;
            for (std::size_t x = x0; x < x1; ++x) lanes[x] += grow[x] * irow[x + kx - pad];
          }
          double acc = 0.0;
          for (std::size_t x = x0; x < x1; ++x) acc += lanes[x];
          gk[ky * g.ksize + kx] += acc;
        }
      }
    }
  }
}

void relu_forward(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* out, const double* grad_out, double* grad_in, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad_in[i] += out[i] > 0.0 ? grad_out[i] : 0.0;
}

void maxpool2_forward(const double* in, std::size_t h, std::size_t w, double* out,
                      std::uint32_t* argmax) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t best = (2 * y) * w + 2 * x;
      const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
      for (std::size_t c : cand) {
        if (in[c] > in[best]) best = c;
      }
      out[y * ow + x] = in[best];
      argmax[y * ow + x] = static_cast<std::uint32_t>(best);
    }
  }
}

void maxpool2_backward(const double* grad_out, const std::uint32_t* argmax, std::size_t out_n,
                       double* grad_in) {
  for (std::size_t i = 0; i < out_n; ++i) grad_in[argmax[i]] += grad_out[i];
}

void upsample2_forward(const double* in, std::size_t h, std::size_t w, double* out) {
  const std::size_t ow = 2 * w;
  for (std::size_t y = 0; y < 2 * h; ++y) {
    const double* irow = in + (y / 2) * w;
    double* orow = out + y * ow;
    for (std::size_t x = 0; x < ow; ++x) orow[x] = irow[x / 2];
  }
}

void upsample2_backward(const double* grad_out, std::size_t h, std::size_t w, double* grad_in) {
  const std::size_t ow = 2 * w;
  for (std::size_t y = 0; y < 2 * h; ++y) {
    const double* grow = grad_out + y * ow;
    double* irow = grad_in + (y / 2) * w;
    for (std::size_t x = 0; x < ow; ++x) irow[x / 2] += grow[x];
  }
}

void softmax_channels(const double* logits, std::size_t channels, std::size_t pixels,
                      double* probs) {
  for (std::size_t p = 0; p < pixels; ++p) {
    double m = logits[p];
    for (std::size_t c = 1; c < channels; ++c) m = std::max(m, logits[c * pixels + p]);
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double e = std::exp(logits[c * pixels + p] - m);
      probs[c * pixels + p] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::size_t c = 0; c < channels; ++c) probs[c * pixels + p] *= inv;
  }
}

void softmax_channels_backward(const double* probs, const double* grad_probs,
                               std::size_t channels, std::size_t pixels, double* grad_logits) {
  for (std::size_t p = 0; p < pixels; ++p) {
    double dot = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      dot += probs[c * pixels + p] * grad_probs[c * pixels + p];
    }
    for (std::size_t c = 0; c < channels; ++c) {
      grad_logits[c * pixels + p] += probs[c * pixels + p] * (grad_probs[c * pixels + p] - dot);
    }
  }
}

}  // namespace iopfl::nn::kernels
