#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nn/model.hpp"
#include "nn/network.hpp"
#include "nn/tensor.hpp"

namespace iopfl::routing {

/// Frozen members [P_1, ..., P_K, w_g]; every conv layer is routable.
class RoutingSpace {
 public:
  explicit RoutingSpace(std::vector<nn::ModelWeights> members);

  std::size_t member_count() const noexcept { return members_.size(); }
  const nn::ModelWeights& member(std::size_t k) const { return members_.at(k); }
  const nn::ModelWeights& global() const { return members_.back(); }
  const std::vector<nn::ModelWeights>& members() const noexcept { return members_; }
  /// Network layer index of each routable layer, in order.
  const std::vector<std::size_t>& routable() const noexcept { return routable_; }

 private:
  std::vector<nn::ModelWeights> members_;
  std::vector<std::size_t> routable_;
};

/// Location of one coefficient net inside the flat parameter vector:
/// W1 (hidden x in), b1 (hidden), w2 (hidden), b2 (1).
struct NetView {
  std::size_t offset = 0;
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t size() const noexcept { return hidden * in + 2 * hidden + 1; }
  std::size_t w1() const noexcept { return offset; }
  std::size_t b1() const noexcept { return offset + hidden * in; }
  std::size_t w2() const noexcept { return b1() + hidden; }
  std::size_t b2() const noexcept { return w2() + hidden; }
};

/// One two-stage map per (member, routable layer):
/// r = sigmoid(w2 . tanh(W1 pool(h) + b1) + b2).
class CoefficientNets {
 public:
  /// W1 ~ N(0, 1/in) seeded, b1 = 0, w2 = 0, b2 = ln(1/K) so r = 1/(K+1) at init.
  static CoefficientNets init(const RoutingSpace& space, std::uint64_t seed);

  std::size_t members() const noexcept { return members_; }
  std::size_t layers() const noexcept { return layers_; }
  const NetView& view(std::size_t member, std::size_t layer) const {
    return views_.at(layer * members_ + member);
  }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  /// Pre-sigmoid output; writes tanh activations into `hidden`.
  double logit(std::size_t member, std::size_t layer, const double* pooled, double* hidden) const;

  /// Accumulates d(params) and d(pooled) for an upstream gradient `dz` on the logit.
  void backward(std::size_t member, std::size_t layer, const double* pooled, const double* hidden,
                double dz, std::span<double> grad, double* dpooled) const;

  /// Drives every layer's coefficients toward one-hot on `member` (final
  /// weights zero, bias +magnitude for `member` and -magnitude elsewhere).
  void saturate(std::size_t member, double magnitude = 20.0);

  bool operator==(const CoefficientNets& o) const noexcept { return params_ == o.params_; }

 private:
  std::size_t members_ = 0, layers_ = 0;
  std::vector<NetView> views_;
  std::vector<double> params_;
};

/// Cached per-sample routing state of one routable layer.
struct RouteCache {
  std::size_t layer = 0;           // network layer index
  std::vector<double> pooled;      // N x C_in
  std::vector<double> hidden;      // N x members x hidden
  std::vector<double> coeff;       // N x members, sigmoid outputs
  std::vector<double> kernel;      // N x |W|, mixed kernels
};

struct RoutedTape {
  nn::Tensor input;
  std::vector<nn::Tensor> outputs;
  std::vector<nn::Tensor> joined_inputs;
  std::vector<nn::BnCache> bn;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<RouteCache> routes;  // one per routable layer
  nn::Tensor probs;

  const nn::Tensor& logits() const { return outputs.back(); }
};

/// Input-conditioned layer-wise mixture: at each routable layer the sample's
/// kernel and bias are sum_k r_k W_k and sum_k r_k b_k. Batch-norm layers use
/// the batch statistics of `x` with the global member's affine parameters.
RoutedTape routed_forward(const RoutingSpace& space, const CoefficientNets& nets,
                          const nn::Tensor& x);

/// Gradient with respect to the coefficient-net parameters for an upstream
/// gradient on the output probabilities. Members receive no gradient.
std::vector<double> routed_backward(const RoutingSpace& space, const CoefficientNets& nets,
                                    const RoutedTape& tape, const nn::Tensor& grad_probs);

/// L x members coefficient statistics over the batch (row-major).
struct RoutingMatrix {
  std::size_t layers = 0, members = 0;
  std::vector<double> mean, stddev;
  double at(std::size_t layer, std::size_t member) const { return mean[layer * members + member]; }
};

RoutingMatrix routing_matrix(const RoutedTape& tape, std::size_t members);

/// Collects per-sample coefficients of several tapes (population statistics
/// across batches).
struct CoefficientAccumulator {
  std::size_t layers = 0, members = 0, samples = 0;
  std::vector<std::vector<double>> values;  // per (layer, member)
  void add(const RoutedTape& tape, std::size_t member_count);
  RoutingMatrix finish() const;
};

}  // namespace iopfl::routing
