#pragma once
// Networks and helpers shared by the unit tests and the acceptance runner.

#include <string>
#include <utility>
#include <vector>

#include "nn/network.hpp"
#include "routing/space.hpp"
#include "test_util.hpp"

namespace iopfl::testing {

inline nn::Layer conv_layer(const std::string& name, std::vector<int> inputs, std::size_t in,
                            std::size_t out, std::size_t k, std::uint64_t seed) {
  nn::Layer l{name, {k == 3 ? nn::LayerKind::kConv3x3 : nn::LayerKind::kConv1x1, in, out}, inputs, {}};
  l.params.push_back(random_tensor({out, in, k, k}, seed, 0.5));
  l.params.push_back(random_tensor({1, out, 1, 1}, seed + 1, 0.1));
  return l;
}

inline nn::Layer bn_layer(const std::string& name, int input, std::size_t ch, std::uint64_t seed) {
  nn::Layer l{name, {nn::LayerKind::kBatchNorm, ch, ch}, {input}, {}};
  nn::Tensor gamma = random_tensor({1, ch, 1, 1}, seed, 0.2);
  for (auto& v : gamma.raw()) v += 1.0;
  l.params.push_back(gamma);
  l.params.push_back(random_tensor({1, ch, 1, 1}, seed + 1, 0.1));
  l.params.push_back(random_tensor({1, ch, 1, 1}, seed + 2, 0.1));
  nn::Tensor var = random_tensor({1, ch, 1, 1}, seed + 3, 0.1);
  for (auto& v : var.raw()) v = 1.0 + std::abs(v);
  l.params.push_back(var);
  return l;
}

inline nn::Layer plain(const std::string& name, nn::LayerKind kind, int input, std::size_t ch) {
  return nn::Layer{name, {kind, ch, ch}, {input}, {}};
}

/// Exercises every layer kind plus a channel concatenation.
inline nn::ModelWeights all_kinds_net(std::uint64_t seed) {
  using nn::LayerKind;
  std::vector<nn::Layer> L;
  L.push_back(conv_layer("c0", {nn::kNetworkInput}, 2, 3, 3, seed));   // 0
  L.push_back(bn_layer("bn0", 0, 3, seed + 10));                        // 1
  L.push_back(plain("relu0", LayerKind::kReLU, 1, 3));                  // 2
  L.push_back(plain("pool0", LayerKind::kMaxPool2, 2, 3));              // 3
  L.push_back(conv_layer("c1", {3}, 3, 3, 3, seed + 20));               // 4
  L.push_back(plain("up0", LayerKind::kUpsample2, 4, 3));               // 5
  L.push_back(conv_layer("c2", {5, 2}, 6, 2, 1, seed + 30));            // 6
  L.push_back(plain("sm", LayerKind::kSoftmax, 6, 2));                  // 7
  auto id = nn::architecture_fingerprint("test-kinds", 2, L);
  return nn::ModelWeights(id, 2, std::move(L));
}

// Denominator floor for the relative error: biases feeding a BN layer have an
// exact zero gradient, where central differences only return roundoff.
inline constexpr double kGradFloor = 1e-4;

struct GradientError {
  std::string where;  // "<layer> slot <s>" or "input"
  double error = 0.0;
};

/// Relative error of backward against central differences of a random
/// projection of the output, per parameter slot and for the input.
inline std::vector<GradientError> gradient_errors(nn::ModelWeights& model, const nn::Tensor& x,
                                                  nn::Mode mode) {
  const nn::Tensor probe = random_tensor(nn::infer(model, x, mode).shape(), 4242);
  const nn::Tape tape = nn::forward(std::as_const(model), x, mode);
  const nn::BackwardResult br = nn::backward_full(tape, probe);
  auto loss = [&] { return weighted_sum(nn::infer(model, x, mode), probe); };

  std::vector<GradientError> out;
  for (std::size_t i = 0; i < model.size(); ++i) {
    for (std::size_t s = 0; s < model.layer(i).spec.trainable_count(); ++s) {
      auto& values = model.mutable_layers()[i].params[s].raw();
      const auto numeric = central_differences(values, loss);
      out.push_back({model.layer(i).name + " slot " + std::to_string(s),
                     max_rel_error(br.grads.at(i, s).raw(), numeric, kGradFloor)});
    }
  }
  nn::Tensor xin = x;
  auto loss_x = [&] { return weighted_sum(nn::infer(model, xin, mode), probe); };
  const auto numeric = central_differences(xin.raw(), loss_x);
  out.push_back({"input", max_rel_error(br.input_grad.raw(), numeric, kGradFloor)});
  return out;
}

/// `count` distinct tiny U-Nets; BN affine and conv biases are randomised too
/// so that mixing the wrong source would be visible.
inline std::vector<nn::ModelWeights> random_members(std::size_t count, std::size_t width,
                                                    std::uint64_t seed) {
  std::vector<nn::ModelWeights> out;
  for (std::size_t k = 0; k < count; ++k) {
    nn::ModelWeights m = nn::build_tiny_unet(1, 2, width, seed + k);
    Rng rng(seed * 31 + k);
    for (std::size_t l = 0; l < m.size(); ++l) {
      const auto& layer = m.layer(l);
      if (layer.spec.is_conv()) {
        for (double& v : m.mutable_param(l, nn::kBias).raw()) v = 0.1 * rng.normal();
      } else if (layer.spec.kind == nn::LayerKind::kBatchNorm) {
        for (double& v : m.mutable_param(l, nn::kGamma).raw()) v = 1.0 + 0.2 * rng.normal();
        for (double& v : m.mutable_param(l, nn::kBeta).raw()) v = 0.1 * rng.normal();
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Member `source` with every BN affine taken from `affine`.
inline nn::ModelWeights with_bn_affine(const nn::ModelWeights& source, const nn::ModelWeights& affine) {
  nn::ModelWeights out = source;
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (out.layer(l).spec.kind != nn::LayerKind::kBatchNorm) continue;
    out.mutable_param(l, nn::kGamma) = affine.layer(l).params[nn::kGamma];
    out.mutable_param(l, nn::kBeta) = affine.layer(l).params[nn::kBeta];
  }
  return out;
}

inline void randomize(routing::CoefficientNets& nets, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (double& v : nets.params()) v += scale * rng.normal();
}

}  // namespace iopfl::testing
