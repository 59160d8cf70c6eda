#include "nn/optimizer.hpp"

#include <cmath>

#include "nn/error.hpp"

namespace iopfl::nn {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  fail(ErrorKind::kConfig, "unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

void AdamBuffer::step(std::span<double> params, std::span<const double> grads,
                      const OptimizerConfig& cfg) {
  if (params.size() != grads.size() || params.size() != m_.size()) {
    fail(ErrorKind::kShape, "adam buffer size mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) fail(ErrorKind::kNumeric, "non-finite gradient in adam step");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grads[i];
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

OptimizerState::OptimizerState(const ModelWeights& model, OptimizerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0) || !std::isfinite(cfg_.learning_rate)) {
    fail(ErrorKind::kConfig, "learning rate must be finite and non-negative");
  }
  if (cfg_.kind == OptimizerKind::kAdam) {
    m_ = GradientSet::zeros_like(model);
    v_ = GradientSet::zeros_like(model);
  }
}

void OptimizerState::apply(ModelWeights& model, const GradientSet& grads) {
  if (!grads.congruent(model)) fail(ErrorKind::kShape, "gradient set does not match model");
  if (!grads.all_finite()) {
    fail(ErrorKind::kNumeric, "non-finite gradient (training diverged)");
  }
  ++step_;
  auto& layers = model.mutable_layers();
  const double lr = cfg_.learning_rate;
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      for (std::size_t s = 0; s < grads.layers()[i].size(); ++s) {
        layers[i].params[s].axpy(-lr, grads.at(i, s));
      }
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (std::size_t s = 0; s < grads.layers()[i].size(); ++s) {
      auto& p = layers[i].params[s].raw();
      const auto& g = grads.at(i, s).raw();
      auto& m = m_.at(i, s).raw();
      auto& v = v_.at(i, s).raw();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.epsilon);
      }
    }
  }
}

}  // namespace iopfl::nn
