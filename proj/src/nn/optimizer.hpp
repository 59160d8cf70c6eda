#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "nn/model.hpp"

namespace iopfl::nn {

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam moments over a flat parameter vector.
class AdamBuffer {
 public:
  AdamBuffer() = default;
  explicit AdamBuffer(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  /// One Adam step on `params` in place; increments the step count.
  void step(std::span<double> params, std::span<const double> grads, const OptimizerConfig& cfg);
  std::uint64_t steps() const noexcept { return step_; }

 private:
  std::vector<double> m_, v_;
  std::uint64_t step_ = 0;
};

class OptimizerState {
 public:
  OptimizerState(const ModelWeights& model, OptimizerConfig cfg);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return step_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  /// sgd: p -= lr * g. adam: bias-corrected moment step. BN running
  /// statistics are untouched. Non-finite gradients are rejected before any
  /// parameter is written.
  void apply(ModelWeights& model, const GradientSet& grads);

 private:
  OptimizerConfig cfg_;
  std::uint64_t step_ = 0;
  GradientSet m_, v_;
};

/// Free-function form of OptimizerState::apply.
inline void apply_update(ModelWeights& model, const GradientSet& grads, OptimizerState& opt) {
  opt.apply(model, grads);
}

}  // namespace iopfl::nn
