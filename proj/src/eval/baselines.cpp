#include "eval/baselines.hpp"

#include "nn/error.hpp"

namespace iopfl::eval {

DiceScores mean_scores(std::span<const DiceScores> scores) {
  if (scores.empty()) fail(ErrorKind::kConfig, "mean_scores: no scores");
  DiceScores out;
  out.per_region.assign(scores[0].per_region.size(), 0.0);
  for (const auto& s : scores) {
    if (s.per_region.size() != out.per_region.size())
      fail(ErrorKind::kShape, "mean_scores: region count mismatch");
    for (std::size_t r = 0; r < s.per_region.size(); ++r) out.per_region[r] += s.per_region[r];
  }
  for (double& v : out.per_region) v /= static_cast<double>(scores.size());
  return out;
}

AverageBaseline baseline_average(std::span<const nn::ModelWeights> members,
                                 const data::ClientDataset& test, nn::Mode mode,
                                 std::size_t batch) {
  if (members.empty()) fail(ErrorKind::kConfig, "average baseline needs at least one member");
  AverageBaseline out;
  const nn::LabelBatch gt = test.all_labels();
  for (const auto& m : members) {
    out.members.push_back(score_labels(predict(m, test, mode, batch), gt, test.classes));
  }
  out.mean = mean_scores(out.members);
  return out;
}

nn::LabelBatch ensemble_predict(std::span<const nn::ModelWeights> members,
                                const data::ClientDataset& test, nn::Mode mode,
                                std::size_t batch) {
  if (members.empty()) fail(ErrorKind::kConfig, "ensemble baseline needs at least one member");
  nn::Tensor sum = predict_logits(members[0], test, mode, batch);
  for (std::size_t k = 1; k < members.size(); ++k) {
    sum.axpy(1.0, predict_logits(members[k], test, mode, batch));
  }
  sum.scale(1.0 / static_cast<double>(members.size()));
  return nn::argmax_labels(nn::softmax(sum));
}

DiceScores baseline_ensemble(std::span<const nn::ModelWeights> members,
                             const data::ClientDataset& test, nn::Mode mode, std::size_t batch) {
  return score_labels(ensemble_predict(members, test, mode, batch), test.all_labels(),
                      test.classes);
}

}  // namespace iopfl::eval
