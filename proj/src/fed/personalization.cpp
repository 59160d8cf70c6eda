#include "fed/personalization.hpp"

#include "nn/error.hpp"

namespace iopfl::fed {

using nn::GradientSet;
using nn::ModelWeights;

std::string_view to_string(PersonalizationVariant v) {
  switch (v) {
    case PersonalizationVariant::kEmaUpdate: return "ema-update";
    case PersonalizationVariant::kEmaSnapshot: return "ema-snapshot";
    case PersonalizationVariant::kLiteral: return "literal";
  }
  return "?";
}

PersonalizationVariant personalization_variant_from_string(std::string_view s) {
  if (s == "ema-update") return PersonalizationVariant::kEmaUpdate;
  if (s == "ema-snapshot") return PersonalizationVariant::kEmaSnapshot;
  if (s == "literal") return PersonalizationVariant::kLiteral;
  fail(ErrorKind::kConfig, "unknown personalization variant '" + std::string(s) +
                               "' (expected ema-update, ema-snapshot or literal)");
}

PersonalizedModel init_personalized(const ModelWeights& initial, double tau,
                                    PersonalizationVariant variant) {
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorKind::kConfig, "tau must lie in (0, 1]");
  return PersonalizedModel{initial, tau, variant};
}

void copy_running_stats(ModelWeights& dst, const ModelWeights& src) {
  nn::require_congruent(dst, src, "running statistics source");
  for (std::size_t l = 0; l < dst.size(); ++l) {
    if (dst.layer(l).spec.kind != nn::LayerKind::kBatchNorm) continue;
    dst.running_stat(l, nn::kRunningMean) = src.layer(l).params[nn::kRunningMean];
    dst.running_stat(l, nn::kRunningVar) = src.layer(l).params[nn::kRunningVar];
  }
}

void personalize_step(PersonalizedModel& p, const GradientSet& local, const GradientSet& global,
                      double eta_l, double eta_g, const ModelWeights& round_start,
                      const ModelWeights* stats_source) {
  if (!local.congruent(p.model) || !global.congruent(p.model)) {
    fail(ErrorKind::kShape, "personalize_step: gradients do not match the personalized model");
  }
  nn::require_congruent(p.model, round_start, "round start model");
  const double tau = p.tau;
  auto& layers = p.model.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t slots = layers[l].spec.trainable_count();
    for (std::size_t s = 0; s < slots; ++s) {
      auto P = layers[l].params[s].values();
      const auto& gl = local.at(l, s).raw();
      const auto& gg = global.at(l, s).raw();
      const auto& w = round_start.layer(l).params[s].raw();
      for (std::size_t i = 0; i < P.size(); ++i) {
        const double step = eta_l * gl[i] + eta_g * gg[i];
        switch (p.variant) {
          case PersonalizationVariant::kEmaUpdate:
            P[i] -= tau * step;
            break;
          case PersonalizationVariant::kEmaSnapshot:
            P[i] = (1.0 - tau) * P[i] + tau * (w[i] - step);
            break;
          case PersonalizationVariant::kLiteral:
            P[i] = (1.0 - tau) * P[i] - tau * step;
            break;
        }
      }
    }
  }
  if (stats_source) copy_running_stats(p.model, *stats_source);
}

std::size_t best_index(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::kState, "select_best: empty validation trace");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

const ModelWeights& select_best(std::span<const ModelWeights> history,
                                std::span<const double> val_dice) {
  if (history.size() != val_dice.size()) {
    fail(ErrorKind::kShape, "select_best: history and trace lengths differ");
  }
  return history[best_index(val_dice)];
}

bool BestTracker::offer(std::size_t round, double score, const ModelWeights& model) {
  if (has_ && !(score > score_)) return false;
  has_ = true;
  round_ = round;
  score_ = score;
  model_ = model;
  return true;
}

}  // namespace iopfl::fed
