#include "routing/space.hpp"

#include <algorithm>
#include <cmath>

#include "nn/error.hpp"
#include "nn/kernels.hpp"
#include "nn/losses.hpp"
#include "nn/rng.hpp"

namespace iopfl::routing {

using nn::LayerKind;
using nn::Tensor;

RoutingSpace::RoutingSpace(std::vector<nn::ModelWeights> members) : members_(std::move(members)) {
  if (members_.size() < 2) {
    fail(ErrorKind::kConfig, "routing space needs at least two members (K personalized + global)");
  }
  for (std::size_t k = 1; k < members_.size(); ++k) {
    nn::require_congruent(members_[0], members_[k], "routing member " + std::to_string(k));
  }
  routable_ = members_[0].conv_layers();
}

CoefficientNets CoefficientNets::init(const RoutingSpace& space, std::uint64_t seed) {
  CoefficientNets nets;
  nets.members_ = space.member_count();
  nets.layers_ = space.routable().size();
  const double K = static_cast<double>(nets.members_ - 1);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < nets.layers_; ++j) {
    const std::size_t in = space.global().layer(space.routable()[j]).spec.in_channels;
    for (std::size_t m = 0; m < nets.members_; ++m) {
      NetView v{offset, in, std::max<std::size_t>(in / 2, 4)};
      nets.views_.push_back(v);
      offset += v.size();
    }
  }
  nets.params_.assign(offset, 0.0);
  Rng rng(seed);
  for (const NetView& v : nets.views_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(v.in));
    for (std::size_t i = 0; i < v.hidden * v.in; ++i) nets.params_[v.w1() + i] = scale * rng.normal();
    nets.params_[v.b2()] = std::log(1.0 / K);
  }
  return nets;
}

double CoefficientNets::logit(std::size_t member, std::size_t layer, const double* pooled,
                              double* hidden) const {
  const NetView& v = view(member, layer);
  const double* W1 = params_.data() + v.w1();
  const double* b1 = params_.data() + v.b1();
  const double* w2 = params_.data() + v.w2();
  double z = params_[v.b2()];
  for (std::size_t h = 0; h < v.hidden; ++h) {
    double u = b1[h];
    for (std::size_t c = 0; c < v.in; ++c) u += W1[h * v.in + c] * pooled[c];
    hidden[h] = std::tanh(u);
    z += w2[h] * hidden[h];
  }
  return z;
}

void CoefficientNets::backward(std::size_t member, std::size_t layer, const double* pooled,
                               const double* hidden, double dz, std::span<double> grad,
                               double* dpooled) const {
  const NetView& v = view(member, layer);
  const double* W1 = params_.data() + v.w1();
  const double* w2 = params_.data() + v.w2();
  grad[v.b2()] += dz;
  for (std::size_t h = 0; h < v.hidden; ++h) {
    grad[v.w2() + h] += dz * hidden[h];
    const double du = dz * w2[h] * (1.0 - hidden[h] * hidden[h]);
    grad[v.b1() + h] += du;
    for (std::size_t c = 0; c < v.in; ++c) {
      grad[v.w1() + h * v.in + c] += du * pooled[c];
      dpooled[c] += du * W1[h * v.in + c];
    }
  }
}

void CoefficientNets::saturate(std::size_t member, double magnitude) {
  for (std::size_t j = 0; j < layers_; ++j) {
    for (std::size_t m = 0; m < members_; ++m) {
      const NetView& v = view(m, j);
      std::fill(params_.begin() + static_cast<std::ptrdiff_t>(v.w2()),
                params_.begin() + static_cast<std::ptrdiff_t>(v.w2() + v.hidden), 0.0);
      params_[v.b2()] = m == member ? magnitude : -magnitude;
    }
  }
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const Tensor& producer(const RoutedTape& t, int idx) {
  return idx == nn::kNetworkInput ? t.input : t.outputs[static_cast<std::size_t>(idx)];
}

void check_input(const nn::ModelWeights& model, const Tensor& x) {
  const std::size_t div = std::size_t{1} << model.downsample_count();
  if (x.c() != model.in_channels() || x.n() == 0 || x.h() % div != 0 || x.w() % div != 0) {
    fail(ErrorKind::kShape, "routed forward: input " + nn::shape_string(x.shape()) +
                                " does not match the routing space architecture");
  }
}

}  // namespace

RoutedTape routed_forward(const RoutingSpace& space, const CoefficientNets& nets, const Tensor& x) {
  const nn::ModelWeights& base = space.global();
  if (nets.members() != space.member_count() || nets.layers() != space.routable().size()) {
    fail(ErrorKind::kShape, "coefficient nets do not match the routing space");
  }
  check_input(base, x);
  const std::size_t L = base.size(), K1 = space.member_count();
  RoutedTape tape;
  tape.input = x;
  tape.outputs.resize(L);
  tape.joined_inputs.resize(L);
  tape.bn.resize(L);
  tape.pool_argmax.resize(L);
  tape.routes.resize(space.routable().size());
  std::vector<int> route_of(L, -1);
  for (std::size_t j = 0; j < space.routable().size(); ++j) {
    route_of[space.routable()[j]] = static_cast<int>(j);
  }

  for (std::size_t i = 0; i < L; ++i) {
    const nn::Layer& layer = base.layer(i);
    const Tensor* in = &producer(tape, layer.inputs.front());
    if (layer.inputs.size() > 1) {
      std::vector<const Tensor*> parts;
      for (int p : layer.inputs) parts.push_back(&producer(tape, p));
      tape.joined_inputs[i] = nn::join_channels(parts);
      in = &tape.joined_inputs[i];
    }
    const std::size_t N = in->n(), C = in->c(), H = in->h(), W = in->w(), P = H * W;
    Tensor& out = tape.outputs[i];
    switch (layer.spec.kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1: {
        const std::size_t j = static_cast<std::size_t>(route_of[i]);
        const std::size_t k = layer.spec.ksize(), Co = layer.spec.out_channels;
        const std::size_t wsz = Co * C * k * k;
        const std::size_t hid = nets.view(0, j).hidden;
        RouteCache& rc = tape.routes[j];
        rc.layer = i;
        rc.pooled.assign(N * C, 0.0);
        rc.hidden.assign(N * K1 * hid, 0.0);
        rc.coeff.assign(N * K1, 0.0);
        rc.kernel.assign(N * wsz, 0.0);
        std::vector<double> bias(Co);
        out = Tensor({N, Co, H, W});
        const nn::kernels::ConvGeom geo{C, Co, H, W, k};
        for (std::size_t n = 0; n < N; ++n) {
          double* pooled = rc.pooled.data() + n * C;
          for (std::size_t c = 0; c < C; ++c) {
            const double* src = in->plane_ptr(n, c);
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += src[p];
            pooled[c] = s / static_cast<double>(P);
          }
          double* kern = rc.kernel.data() + n * wsz;
          std::fill(bias.begin(), bias.end(), 0.0);
          for (std::size_t m = 0; m < K1; ++m) {
            const double r =
                sigmoid(nets.logit(m, j, pooled, rc.hidden.data() + (n * K1 + m) * hid));
            rc.coeff[n * K1 + m] = r;
            const nn::Layer& ml = space.member(m).layer(i);
            const double* wk = ml.params[nn::kKernel].data();
            const double* bk = ml.params[nn::kBias].data();
            for (std::size_t q = 0; q < wsz; ++q) kern[q] += r * wk[q];
            for (std::size_t q = 0; q < Co; ++q) bias[q] += r * bk[q];
          }
          nn::kernels::conv_forward(geo, in->plane_ptr(n, 0), kern, bias.data(),
                                    out.plane_ptr(n, 0));
        }
        break;
      }
      case LayerKind::kBatchNorm:
        out = nn::batchnorm_batch(*in, layer.params[nn::kGamma], layer.params[nn::kBeta],
                                  tape.bn[i]);
        break;
      case LayerKind::kReLU:
        out = Tensor(in->shape());
        nn::kernels::relu_forward(in->data(), out.data(), in->size());
        break;
      case LayerKind::kMaxPool2: {
        out = Tensor({N, C, H / 2, W / 2});
        auto& am = tape.pool_argmax[i];
        am.resize(out.size());
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            nn::kernels::maxpool2_forward(in->plane_ptr(n, c), H, W, out.plane_ptr(n, c),
                                          am.data() + (n * C + c) * out.plane());
        break;
      }
      case LayerKind::kUpsample2:
        out = Tensor({N, C, 2 * H, 2 * W});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            nn::kernels::upsample2_forward(in->plane_ptr(n, c), H, W, out.plane_ptr(n, c));
        break;
      case LayerKind::kSoftmax:
        out = nn::softmax(*in);
        break;
    }
  }
  tape.probs = nn::softmax(tape.logits());
  return tape;
}

std::vector<double> routed_backward(const RoutingSpace& space, const CoefficientNets& nets,
                                    const RoutedTape& tape, const Tensor& grad_probs) {
  const nn::ModelWeights& base = space.global();
  const std::size_t L = base.size(), K1 = space.member_count();
  if (tape.outputs.size() != L || !grad_probs.same_shape(tape.probs)) {
    fail(ErrorKind::kShape, "routed backward: tape or gradient does not match");
  }
  std::vector<double> grad(nets.size(), 0.0);
  std::vector<Tensor> gout(L);
  {
    const Tensor& pr = tape.probs;
    Tensor g(pr.shape());
    for (std::size_t n = 0; n < pr.n(); ++n) {
      nn::kernels::softmax_channels_backward(pr.plane_ptr(n, 0), grad_probs.plane_ptr(n, 0),
                                             pr.c(), pr.plane(), g.plane_ptr(n, 0));
    }
    gout[L - 1] = std::move(g);
  }
  Tensor input_grad;  // discarded
  auto grad_of = [&](int idx) -> Tensor& {
    if (idx == nn::kNetworkInput) {
      if (input_grad.size() == 0) input_grad = Tensor(tape.input.shape());
      return input_grad;
    }
    auto& t = gout[static_cast<std::size_t>(idx)];
    if (t.size() == 0) t = Tensor(tape.outputs[static_cast<std::size_t>(idx)].shape());
    return t;
  };
  std::vector<int> route_of(L, -1);
  for (std::size_t j = 0; j < space.routable().size(); ++j) {
    route_of[space.routable()[j]] = static_cast<int>(j);
  }

  for (std::size_t ii = L; ii-- > 0;) {
    if (gout[ii].size() == 0) continue;
    const nn::Layer& layer = base.layer(ii);
    const Tensor& g = gout[ii];
    const bool joined = layer.inputs.size() > 1;
    const Tensor& in = joined ? tape.joined_inputs[ii] : producer(tape, layer.inputs.front());
    Tensor joined_grad;
    Tensor* gin = nullptr;
    if (joined) {
      joined_grad = Tensor(in.shape());
      gin = &joined_grad;
    } else {
      gin = &grad_of(layer.inputs.front());
    }
    const std::size_t N = in.n(), C = in.c(), H = in.h(), W = in.w(), P = H * W;
    switch (layer.spec.kind) {
      case LayerKind::kConv3x3:
      case LayerKind::kConv1x1: {
        const std::size_t j = static_cast<std::size_t>(route_of[ii]);
        const RouteCache& rc = tape.routes[j];
        const std::size_t k = layer.spec.ksize(), Co = layer.spec.out_channels;
        const std::size_t wsz = Co * C * k * k;
        const std::size_t hid = nets.view(0, j).hidden;
        const nn::kernels::ConvGeom geo{C, Co, H, W, k};
        std::vector<double> dW(wsz), db(Co), dp(C);
        for (std::size_t n = 0; n < N; ++n) {
          std::fill(dW.begin(), dW.end(), 0.0);
          std::fill(db.begin(), db.end(), 0.0);
          std::fill(dp.begin(), dp.end(), 0.0);
          nn::kernels::conv_backward_weight(geo, g.plane_ptr(n, 0), in.plane_ptr(n, 0), dW.data(),
                                            db.data());
          nn::kernels::conv_backward_input(geo, g.plane_ptr(n, 0), rc.kernel.data() + n * wsz,
                                           gin->plane_ptr(n, 0));
          const double* pooled = rc.pooled.data() + n * C;
          for (std::size_t m = 0; m < K1; ++m) {
            const nn::Layer& ml = space.member(m).layer(ii);
            const double* wk = ml.params[nn::kKernel].data();
            const double* bk = ml.params[nn::kBias].data();
            double dr = 0.0;
            for (std::size_t q = 0; q < wsz; ++q) dr += wk[q] * dW[q];
            for (std::size_t q = 0; q < Co; ++q) dr += bk[q] * db[q];
            const double r = rc.coeff[n * K1 + m];
            nets.backward(m, j, pooled, rc.hidden.data() + (n * K1 + m) * hid, dr * r * (1.0 - r),
                          grad, dp.data());
          }
          // Coefficients depend on the layer input through average pooling.
          for (std::size_t c = 0; c < C; ++c) {
            const double d = dp[c] / static_cast<double>(P);
            double* dst = gin->plane_ptr(n, c);
            for (std::size_t p = 0; p < P; ++p) dst[p] += d;
          }
        }
        break;
      }
      case LayerKind::kBatchNorm:
        nn::batchnorm_batch_backward(g, layer.params[nn::kGamma], tape.bn[ii], *gin, nullptr,
                                     nullptr);
        break;
      case LayerKind::kReLU:
        nn::kernels::relu_backward(tape.outputs[ii].data(), g.data(), gin->data(), g.size());
        break;
      case LayerKind::kMaxPool2: {
        const auto& am = tape.pool_argmax[ii];
        const std::size_t op = g.plane();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            nn::kernels::maxpool2_backward(g.plane_ptr(n, c), am.data() + (n * C + c) * op, op,
                                           gin->plane_ptr(n, c));
        break;
      }
      case LayerKind::kUpsample2:
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            nn::kernels::upsample2_backward(g.plane_ptr(n, c), H, W, gin->plane_ptr(n, c));
        break;
      case LayerKind::kSoftmax:
        for (std::size_t n = 0; n < N; ++n)
          nn::kernels::softmax_channels_backward(tape.outputs[ii].plane_ptr(n, 0),
                                                 g.plane_ptr(n, 0), C, P, gin->plane_ptr(n, 0));
        break;
    }
    if (joined) {
      std::vector<Tensor*> parts;
      for (int p : layer.inputs) parts.push_back(&grad_of(p));
      nn::split_channels_accumulate(joined_grad, parts);
    }
    gout[ii] = Tensor();
  }
  return grad;
}

void CoefficientAccumulator::add(const RoutedTape& tape, std::size_t member_count) {
  if (values.empty()) {
    layers = tape.routes.size();
    members = member_count;
    values.resize(layers * members);
  }
  const std::size_t N = tape.input.n();
  for (std::size_t j = 0; j < layers; ++j)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < members; ++m)
        values[j * members + m].push_back(tape.routes[j].coeff[n * members + m]);
  samples += N;
}

// Two-pass so that constant coefficients give exactly zero spread.
RoutingMatrix CoefficientAccumulator::finish() const {
  RoutingMatrix R;
  R.layers = layers;
  R.members = members;
  R.mean.resize(values.size());
  R.stddev.resize(values.size());
  const double n = static_cast<double>(samples);
  for (std::size_t i = 0; i < values.size(); ++i) {
    double sum = 0.0;
    for (double v : values[i]) sum += v;
    R.mean[i] = sum / n;
    double ss = 0.0;
    for (double v : values[i]) ss += (v - R.mean[i]) * (v - R.mean[i]);
    R.stddev[i] = std::sqrt(ss / n);
  }
  return R;
}

RoutingMatrix routing_matrix(const RoutedTape& tape, std::size_t members) {
  CoefficientAccumulator acc;
  acc.add(tape, members);
  return acc.finish();
}

}  // namespace iopfl::routing
