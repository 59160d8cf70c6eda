#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "nn/model.hpp"

namespace iopfl::fed {

/// ema-update:   P <- P - tau * (eta_l * gL + eta_g * gG)
/// ema-snapshot: P <- (1 - tau) * P + tau * u, u = w - eta_l * gL - eta_g * gG
/// literal:      P <- (1 - tau) * P - tau * (eta_l * gL + eta_g * gG)
enum class PersonalizationVariant { kEmaUpdate, kEmaSnapshot, kLiteral };

std::string_view to_string(PersonalizationVariant v);
PersonalizationVariant personalization_variant_from_string(std::string_view s);

struct PersonalizedModel {
  nn::ModelWeights model;
  double tau = 0.9;
  PersonalizationVariant variant = PersonalizationVariant::kEmaUpdate;
};

/// P^0 = w^0. tau must lie in (0, 1].
PersonalizedModel init_personalized(const nn::ModelWeights& initial, double tau,
                                    PersonalizationVariant variant);

/// One round of accumulation. `round_start` is the client's model at the
/// start of the round (the broadcast global model); the snapshot variant
/// mixes toward round_start - eta_l*gL - eta_g*gG. BN running statistics are
/// copied from `stats_source` when given.
void personalize_step(PersonalizedModel& p, const nn::GradientSet& local,
                      const nn::GradientSet& global, double eta_l, double eta_g,
                      const nn::ModelWeights& round_start,
                      const nn::ModelWeights* stats_source = nullptr);

/// Index of the maximal score, earliest on ties. Throws on an empty trace.
std::size_t best_index(std::span<const double> scores);

const nn::ModelWeights& select_best(std::span<const nn::ModelWeights> history,
                                    std::span<const double> val_dice);

/// Streaming form of select_best: keeps the first checkpoint with the highest score.
class BestTracker {
 public:
  /// Returns true when `score` strictly improves on the best so far.
  bool offer(std::size_t round, double score, const nn::ModelWeights& model);

  bool empty() const noexcept { return !has_; }
  std::size_t round() const noexcept { return round_; }
  double score() const noexcept { return score_; }
  const nn::ModelWeights& model() const noexcept { return model_; }

 private:
  bool has_ = false;
  std::size_t round_ = 0;
  double score_ = 0.0;
  nn::ModelWeights model_;
};

/// Copies BN running mean/var from `src` into `dst`.
void copy_running_stats(nn::ModelWeights& dst, const nn::ModelWeights& src);

}  // namespace iopfl::fed
