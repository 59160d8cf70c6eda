#include "nn/network.hpp"

#include <algorithm>
#include <cmath>

#include "nn/error.hpp"
#include "nn/kernels.hpp"

namespace iopfl::nn {
namespace {

[[noreturn]] void layer_error(const Layer& l, const std::string& msg) {
  fail(ErrorKind::kShape, "layer '" + l.name + "' (" + std::string(to_string(l.spec.kind)) +
                              "): " + msg);
}

void check_input(const ModelWeights& model, const Tensor& x) {
  const Layer& first = model.layer(0);
  if (x.c() != model.in_channels()) {
    layer_error(first, "expected " + std::to_string(model.in_channels()) +
                           " input channels, got " + std::to_string(x.c()));
  }
  const std::size_t div = std::size_t{1} << model.downsample_count();
  if (x.n() == 0 || x.h() == 0 || x.h() % div != 0 || x.w() % div != 0) {
    layer_error(first, "input shape " + shape_string(x.shape()) +
                           " must be non-empty with spatial dims divisible by " +
                           std::to_string(div));
  }
}

const Tensor& producer(const Tape& tape, int idx) {
  return idx == kNetworkInput ? tape.input : tape.outputs[static_cast<std::size_t>(idx)];
}

Tape run_forward(const ModelWeights& model, ModelWeights* writable, const Tensor& x, Mode mode,
                 double momentum = kBnMomentum) {
  check_input(model, x);
  Tape tape;
  tape.model = &model;
  tape.revision = model.revision();
  tape.mode = mode;
  tape.input = x;
  const std::size_t L = model.size();
  tape.outputs.resize(L);
  tape.joined_inputs.resize(L);
  tape.bn.resize(L);
  tape.pool_argmax.resize(L);

  for (std::size_t i = 0; i < L; ++i) {
    const Layer& layer = model.layer(i);
    if (layer.inputs.empty()) layer_error(layer, "no producers");
    for (int p : layer.inputs) {
      if (p != kNetworkInput && (p < 0 || static_cast<std::size_t>(p) >= i)) {
        layer_error(layer, "producer index out of order");
      }
    }
    const Tensor* in = &producer(tape, layer.inputs.front());
    if (layer.inputs.size() > 1) {
      std::vector<const Tensor*> parts;
      for (int p : layer.inputs) parts.push_back(&producer(tape, p));
      for (const Tensor* t : parts) {
        if (t->n() != in->n() || t->h() != in->h() || t->w() != in->w()) {
          layer_error(layer, "producers disagree on batch/spatial shape");
        }
      }
      tape.joined_inputs[i] = join_channels(parts);
      in = &tape.joined_inputs[i];
    }
    if (in->c() != layer.spec.in_channels) {
      layer_error(layer, "expected " + std::to_string(layer.spec.in_channels) +
                             " input channels, got " + std::to_string(in->c()));
    }
    const std::size_t N = in->n(), C = in->c(), H = in->h(), W = in->w();
    Tensor& out = tape.outputs[i];
    switch (layer.spec.kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1: {
        const std::size_t k = layer.spec.ksize();
        const Tensor& kernel = layer.params[kKernel];
        if (kernel.shape() != Shape4{layer.spec.out_channels, C, k, k}) {
          layer_error(layer, "kernel shape " + shape_string(kernel.shape()) + " inconsistent");
        }
        kernels::ConvGeom g{C, layer.spec.out_channels, H, W, k};
        out = Tensor({N, g.out_ch, H, W});
        for (std::size_t n = 0; n < N; ++n) {
          kernels::conv_forward(g, in->plane_ptr(n, 0), kernel.data(),
                                layer.params[kBias].data(), out.plane_ptr(n, 0));
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const Tensor& gamma = layer.params[kGamma];
        const Tensor& beta = layer.params[kBeta];
        if (gamma.size() != C) layer_error(layer, "BN parameter length mismatch");
        BnCache& cache = tape.bn[i];
        if (mode == Mode::kEval) {
          const Tensor& rm = layer.params[kRunningMean];
          const Tensor& rv = layer.params[kRunningVar];
          cache.xhat = Tensor(in->shape());
          cache.inv_std.resize(C);
          out = Tensor(in->shape());
          for (std::size_t c = 0; c < C; ++c) {
            cache.inv_std[c] = 1.0 / std::sqrt(std::max(rv[c], kBnVarFloor) + kBnEpsilon);
          }
          const std::size_t P = H * W;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
              const double* src = in->plane_ptr(n, c);
              double* xh = cache.xhat.plane_ptr(n, c);
              double* dst = out.plane_ptr(n, c);
              for (std::size_t p = 0; p < P; ++p) {
                xh[p] = (src[p] - rm[c]) * cache.inv_std[c];
                dst[p] = gamma[c] * xh[p] + beta[c];
              }
            }
          }
        } else {
          std::vector<double> mean, var;
          out = batchnorm_batch(*in, gamma, beta, cache, &mean, &var);
          if (mode == Mode::kTrain && writable != nullptr) {
            Tensor& rm = writable->running_stat(i, kRunningMean);
            Tensor& rv = writable->running_stat(i, kRunningVar);
            for (std::size_t c = 0; c < C; ++c) {
              rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[c];
              rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c];
            }
          }
        }
        break;
      }
      case LayerKind::kReLU:
        out = Tensor(in->shape());
        kernels::relu_forward(in->data(), out.data(), in->size());
        break;
      case LayerKind::kMaxPool2: {
        if (H % 2 != 0 || W % 2 != 0) layer_error(layer, "odd spatial size for maxpool2");
        out = Tensor({N, C, H / 2, W / 2});
        auto& am = tape.pool_argmax[i];
        am.resize(out.size());
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            kernels::maxpool2_forward(in->plane_ptr(n, c), H, W, out.plane_ptr(n, c),
                                      am.data() + (n * C + c) * out.plane());
          }
        }
        break;
      }
      case LayerKind::kUpsample2:
        out = Tensor({N, C, 2 * H, 2 * W});
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            kernels::upsample2_forward(in->plane_ptr(n, c), H, W, out.plane_ptr(n, c));
          }
        }
        break;
      case LayerKind::kSoftmax:
        out = Tensor(in->shape());
        for (std::size_t n = 0; n < N; ++n) {
          kernels::softmax_channels(in->plane_ptr(n, 0), C, H * W, out.plane_ptr(n, 0));
        }
        break;
    }
  }
  return tape;
}

}  // namespace

Tensor join_channels(const std::vector<const Tensor*>& parts) {
  std::size_t channels = 0;
  for (const Tensor* t : parts) channels += t->c();
  const Tensor& first = *parts.front();
  Tensor out({first.n(), channels, first.h(), first.w()});
  for (std::size_t n = 0; n < first.n(); ++n) {
    double* dst = out.plane_ptr(n, 0);
    for (const Tensor* t : parts) {
      const std::size_t len = t->c() * t->plane();
      std::copy(t->plane_ptr(n, 0), t->plane_ptr(n, 0) + len, dst);
      dst += len;
    }
  }
  return out;
}

void split_channels_accumulate(const Tensor& joined, const std::vector<Tensor*>& parts) {
  for (std::size_t n = 0; n < joined.n(); ++n) {
    const double* src = joined.plane_ptr(n, 0);
    for (Tensor* t : parts) {
      const std::size_t len = t->c() * t->plane();
      double* dst = t->plane_ptr(n, 0);
      for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
      src += len;
    }
  }
}

Tensor batchnorm_batch(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnCache& cache,
                       std::vector<double>* batch_mean, std::vector<double>* batch_var_unbiased) {
  const std::size_t N = x.n(), C = x.c(), P = x.plane();
  const double M = static_cast<double>(N * P);
  Tensor y(x.shape());
  cache.xhat = Tensor(x.shape());
  cache.inv_std.assign(C, 0.0);
  if (batch_mean) batch_mean->assign(C, 0.0);
  if (batch_var_unbiased) batch_var_unbiased->assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* src = x.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) sum += src[p];
    }
    const double mean = sum / M;
    double sq = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* src = x.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        const double d = src[p] - mean;
        sq += d * d;
      }
    }
    const double var = sq / M;
    const double inv_std = 1.0 / std::sqrt(var + kBnEpsilon);
    cache.inv_std[c] = inv_std;
    if (batch_mean) (*batch_mean)[c] = mean;
    if (batch_var_unbiased) (*batch_var_unbiased)[c] = M > 1.0 ? sq / (M - 1.0) : var;
    for (std::size_t n = 0; n < N; ++n) {
      const double* src = x.plane_ptr(n, c);
      double* xh = cache.xhat.plane_ptr(n, c);
      double* dst = y.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        xh[p] = (src[p] - mean) * inv_std;
        dst[p] = gamma[c] * xh[p] + beta[c];
      }
    }
  }
  return y;
}

void batchnorm_batch_backward(const Tensor& g, const Tensor& gamma, const BnCache& cache,
                              Tensor& dx, Tensor* dgamma, Tensor* dbeta) {
  const std::size_t N = g.n(), C = g.c(), P = g.plane();
  const double M = static_cast<double>(N * P);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* gp = g.plane_ptr(n, c);
      const double* xh = cache.xhat.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) {
        sum_g += gp[p];
        sum_gx += gp[p] * xh[p];
      }
    }
    if (dgamma) (*dgamma)[c] += sum_gx;
    if (dbeta) (*dbeta)[c] += sum_g;
    const double scale = gamma[c] * cache.inv_std[c] / M;
    for (std::size_t n = 0; n < N; ++n) {
      const double* gp = g.plane_ptr(n, c);
      const double* xh = cache.xhat.plane_ptr(n, c);
      double* d = dx.plane_ptr(n, c);
      for (std::size_t p = 0; p < P; ++p) d[p] += scale * (M * gp[p] - sum_g - xh[p] * sum_gx);
    }
  }
}

Tape forward(ModelWeights& model, const Tensor& x, Mode mode) {
  return run_forward(model, &model, x, mode);
}

Tape forward(const ModelWeights& model, const Tensor& x, Mode mode) {
  if (mode == Mode::kTrain) {
    fail(ErrorKind::kState, "train-mode forward requires mutable weights");
  }
  return run_forward(model, nullptr, x, mode);
}

void estimate_bn_statistics(ModelWeights& model, const Tensor& x) {
  run_forward(model, &model, x, Mode::kTrain, 1.0);
}

Tensor infer(const ModelWeights& model, const Tensor& x, Mode mode) {
  Tape tape = forward(model, x, mode);
  return std::move(tape.outputs.back());
}

GradientSet backward(const Tape& tape, const Tensor& loss_grad) {
  return backward_full(tape, loss_grad).grads;
}

BackwardResult backward_full(const Tape& tape, const Tensor& loss_grad) {
  if (tape.model == nullptr || tape.outputs.empty()) {
    fail(ErrorKind::kState, "backward called with an empty tape");
  }
  const ModelWeights& model = *tape.model;
  if (tape.revision != model.revision() || tape.outputs.size() != model.size()) {
    fail(ErrorKind::kState, "backward called with a stale tape (model changed since forward)");
  }
  if (!loss_grad.same_shape(tape.logits())) {
    fail(ErrorKind::kShape, "loss gradient shape " + shape_string(loss_grad.shape()) +
                                " does not match logits " + shape_string(tape.logits().shape()));
  }
  const std::size_t L = model.size();
  BackwardResult result{GradientSet::zeros_like(model), Tensor(tape.input.shape())};
  std::vector<Tensor> gout(L);
  gout[L - 1] = loss_grad;

  auto grad_of = [&](int idx) -> Tensor& {
    if (idx == kNetworkInput) return result.input_grad;
    auto& t = gout[static_cast<std::size_t>(idx)];
    if (t.size() == 0) t = Tensor(tape.outputs[static_cast<std::size_t>(idx)].shape());
    return t;
  };

  for (std::size_t ii = L; ii-- > 0;) {
    if (gout[ii].size() == 0) continue;
    const Layer& layer = model.layer(ii);
    const Tensor& g = gout[ii];
    const Tensor& in = layer.inputs.size() > 1 ? tape.joined_inputs[ii]
                                               : producer(tape, layer.inputs.front());
    const bool joined = layer.inputs.size() > 1;
    Tensor joined_grad;
    Tensor* gin = nullptr;
    if (joined) {
      joined_grad = Tensor(in.shape());
      gin = &joined_grad;
    } else {
      gin = &grad_of(layer.inputs.front());
    }
    const std::size_t N = in.n(), C = in.c(), H = in.h(), W = in.w();
    switch (layer.spec.kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1: {
        kernels::ConvGeom geo{C, layer.spec.out_channels, H, W, layer.spec.ksize()};
        Tensor& gk = result.grads.at(ii, kKernel);
        Tensor& gb = result.grads.at(ii, kBias);
        for (std::size_t n = 0; n < N; ++n) {
          kernels::conv_backward_weight(geo, g.plane_ptr(n, 0), in.plane_ptr(n, 0), gk.data(),
                                        gb.data());
          kernels::conv_backward_input(geo, g.plane_ptr(n, 0), layer.params[kKernel].data(),
                                       gin->plane_ptr(n, 0));
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        const BnCache& cache = tape.bn[ii];
        Tensor& dgamma = result.grads.at(ii, kGamma);
        Tensor& dbeta = result.grads.at(ii, kBeta);
        if (tape.mode == Mode::kEval) {
          const Tensor& gamma = layer.params[kGamma];
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
              const double* gp = g.plane_ptr(n, c);
              const double* xh = cache.xhat.plane_ptr(n, c);
              double* d = gin->plane_ptr(n, c);
              double sg = 0.0, sgx = 0.0;
              const double s = gamma[c] * cache.inv_std[c];
              for (std::size_t p = 0; p < H * W; ++p) {
                sg += gp[p];
                sgx += gp[p] * xh[p];
                d[p] += s * gp[p];
              }
              dgamma[c] += sgx;
              dbeta[c] += sg;
            }
          }
        } else {
          batchnorm_batch_backward(g, layer.params[kGamma], cache, *gin, &dgamma, &dbeta);
        }
        break;
      }
      case LayerKind::kReLU:
        kernels::relu_backward(tape.outputs[ii].data(), g.data(), gin->data(), g.size());
        break;
      case LayerKind::kMaxPool2: {
        const auto& am = tape.pool_argmax[ii];
        const std::size_t op = g.plane();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            kernels::maxpool2_backward(g.plane_ptr(n, c), am.data() + (n * C + c) * op, op,
                                       gin->plane_ptr(n, c));
          }
        }
        break;
      }
      case LayerKind::kUpsample2:
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            kernels::upsample2_backward(g.plane_ptr(n, c), H, W, gin->plane_ptr(n, c));
          }
        }
        break;
      case LayerKind::kSoftmax:
        for (std::size_t n = 0; n < N; ++n) {
          kernels::softmax_channels_backward(tape.outputs[ii].plane_ptr(n, 0), g.plane_ptr(n, 0),
                                             C, H * W, gin->plane_ptr(n, 0));
        }
        break;
    }
    if (joined) {
      std::vector<Tensor*> parts;
      for (int p : layer.inputs) parts.push_back(&grad_of(p));
      split_channels_accumulate(joined_grad, parts);
    }
    gout[ii] = Tensor();  // release
  }
  return result;
}

}  // namespace iopfl::nn
