#pragma once

// Per-sample numeric kernels shared by the plain and routed network engines.
// All planes are row-major (H, W); channel planes are contiguous.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace iopfl::nn::kernels {

struct ConvGeom {
  std::size_t in_ch;
  std::size_t out_ch;
  std::size_t height;
  std::size_t width;
  std::size_t ksize;  // 1 or 3, stride 1, zero padding ksize/2
};

/// out[co] = bias[co] + sum_ci kernel[co,ci] * in[ci]. bias may be null.
void conv_forward(const ConvGeom& g, const double* in, const double* kernel,
                  const double* bias, double* out);

/// grad_in += conv^T(kernel, grad_out)
void conv_backward_input(const ConvGeom& g, const double* grad_out, const double* kernel,
                         double* grad_in);

/// grad_kernel += correlation(grad_out, in); grad_bias += spatial sum of grad_out.
/// grad_bias may be null.
void conv_backward_weight(const ConvGeom& g, const double* grad_out, const double* in,
                          double* grad_kernel, double* grad_bias);

void relu_forward(const double* in, double* out, std::size_t n);
void relu_backward(const double* out, const double* grad_out, double* grad_in, std::size_t n);

/// 2x2 max pooling on one plane; argmax holds the flat input index per output.
void maxpool2_forward(const double* in, std::size_t h, std::size_t w, double* out,
                      std::uint32_t* argmax);
void maxpool2_backward(const double* grad_out, const std::uint32_t* argmax, std::size_t out_n,
                       double* grad_in);

/// Nearest-neighbour x2 upsampling on one plane of size (h, w).
void upsample2_forward(const double* in, std::size_t h, std::size_t w, double* out);
void upsample2_backward(const double* grad_out, std::size_t h, std::size_t w, double* grad_in);

/// Channel softmax for one sample: logits (C, P) -> probs (C, P).
void softmax_channels(const double* logits, std::size_t channels, std::size_t pixels,
                      double* probs);
/// grad_logits = J^T grad_probs per pixel.
void softmax_channels_backward(const double* probs, const double* grad_probs,
                               std::size_t channels, std::size_t pixels, double* grad_logits);

}  // namespace iopfl::nn::kernels
