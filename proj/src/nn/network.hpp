#pragma once

#include <cstdint>
#include <vector>

#include "nn/model.hpp"
#include "nn/tensor.hpp"

namespace iopfl::nn {

enum class Mode {
  kTrain,       // batch statistics, running statistics updated
  kEval,        // stored running statistics
  kBatchStats,  // batch statistics, nothing written back
};

inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnVarFloor = 1e-5;

/// Per-layer caches of one forward pass. Backward needs the model it was
/// recorded against, unchanged.
struct BnCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

class Tape {
 public:
  const Tensor& logits() const { return outputs.back(); }
  const Tensor& output(std::size_t layer) const { return outputs.at(layer); }

  const ModelWeights* model = nullptr;
  std::uint64_t revision = 0;
  Mode mode = Mode::kEval;
  Tensor input;
  std::vector<Tensor> outputs;
  /// Concatenated input, stored only for layers with more than one producer.
  std::vector<Tensor> joined_inputs;
  std::vector<BnCache> bn;
  std::vector<std::vector<std::uint32_t>> pool_argmax;
};

/// Forward pass. Train mode updates BN running statistics in `model`.
Tape forward(ModelWeights& model, const Tensor& x, Mode mode);
/// Forward pass on immutable weights; rejects Mode::kTrain.
Tape forward(const ModelWeights& model, const Tensor& x, Mode mode);

/// Replaces every BN running mean/variance with the batch statistics of `x`
/// (unbiased variance), i.e. a train-mode pass with momentum 1.
void estimate_bn_statistics(ModelWeights& model, const Tensor& x);

/// Logits only, eval mode unless overridden (never train).
Tensor infer(const ModelWeights& model, const Tensor& x, Mode mode = Mode::kEval);

struct BackwardResult {
  GradientSet grads;
  Tensor input_grad;
};

GradientSet backward(const Tape& tape, const Tensor& loss_grad);
BackwardResult backward_full(const Tape& tape, const Tensor& loss_grad);

/// Concatenates producer outputs along channels.
Tensor join_channels(const std::vector<const Tensor*>& parts);
/// Splits a channel-concatenated gradient back into per-producer pieces.
void split_channels_accumulate(const Tensor& joined, const std::vector<Tensor*>& parts);

/// Batch-statistics BN forward for one layer. Returns y; fills cache.
Tensor batchnorm_batch(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnCache& cache,
                       std::vector<double>* batch_mean = nullptr,
                       std::vector<double>* batch_var_unbiased = nullptr);
/// Backward of batchnorm_batch; accumulates into dx and (optionally) dgamma/dbeta.
void batchnorm_batch_backward(const Tensor& g, const Tensor& gamma, const BnCache& cache,
                              Tensor& dx, Tensor* dgamma, Tensor* dbeta);

}  // namespace iopfl::nn
