#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "data/synth.hpp"
#include "nn/losses.hpp"
#include "nn/model.hpp"
#include "nn/network.hpp"

namespace iopfl::eval {

/// 2|P∩G| / (|P|+|G|) for label c; 1.0 when both are empty.
double dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::int32_t c);

/// Dice of the nested region {label >= r}. For 2-class data region 1 is the
/// foreground; for 3-class data region 1 is the disc (rim + cup), region 2 the cup.
double region_dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                   std::int32_t r);

/// Names of the reported regions: {"foreground"} or {"disc", "cup"}.
std::vector<std::string> region_names(std::size_t classes);

/// Per-region Dice averaged over samples.
struct DiceScores {
  std::vector<double> per_region;
  double mean() const;
};

DiceScores score_labels(const nn::LabelBatch& pred, const nn::LabelBatch& gt, std::size_t classes);

/// Argmax predictions of a model, processed in chunks of `batch` samples.
nn::LabelBatch predict(const nn::ModelWeights& model, const data::ClientDataset& ds,
                       nn::Mode mode = nn::Mode::kEval, std::size_t batch = 16);

/// Logits of a model over the whole dataset, chunked.
nn::Tensor predict_logits(const nn::ModelWeights& model, const data::ClientDataset& ds,
                          nn::Mode mode = nn::Mode::kEval, std::size_t batch = 16);

DiceScores evaluate(const nn::ModelWeights& model, const data::ClientDataset& ds,
                    nn::Mode mode = nn::Mode::kEval);

}  // namespace iopfl::eval
