#pragma once

#include <span>
#include <vector>

#include "eval/metrics.hpp"

namespace iopfl::eval {

struct AverageBaseline {
  std::vector<DiceScores> members;  // each member's own Dice
  DiceScores mean;                  // per-region mean over members
};

/// Per-region mean of several score sets (summed in order).
DiceScores mean_scores(std::span<const DiceScores> scores);

/// Mean over members of each member's Dice on `test`.
AverageBaseline baseline_average(std::span<const nn::ModelWeights> members,
                                 const data::ClientDataset& test, nn::Mode mode = nn::Mode::kEval,
                                 std::size_t batch = 16);

/// Per-pixel mean of member logits (summed in member order), softmax, argmax.
nn::LabelBatch ensemble_predict(std::span<const nn::ModelWeights> members,
                                const data::ClientDataset& test, nn::Mode mode = nn::Mode::kEval,
                                std::size_t batch = 16);

DiceScores baseline_ensemble(std::span<const nn::ModelWeights> members,
                             const data::ClientDataset& test, nn::Mode mode = nn::Mode::kEval,
                             std::size_t batch = 16);

}  // namespace iopfl::eval
