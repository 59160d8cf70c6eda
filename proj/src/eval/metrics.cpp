#include "eval/metrics.hpp"

#include <numeric>

#include "nn/error.hpp"

namespace iopfl::eval {
namespace {

template <class Pred>
double dice_impl(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, Pred in) {
  if (pred.size() != gt.size()) fail(ErrorKind::kShape, "dice: prediction/label size mismatch");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = in(pred[i]), b = in(gt[i]);
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

}  // namespace

double dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt, std::int32_t c) {
  return dice_impl(pred, gt, [c](std::int32_t v) { return v == c; });
}

double region_dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                   std::int32_t r) {
  return dice_impl(pred, gt, [r](std::int32_t v) { return v >= r; });
}

std::vector<std::string> region_names(std::size_t classes) {
  if (classes == 3) return {"disc", "cup"};
  if (classes == 2) return {"foreground"};
  std::vector<std::string> out;
  for (std::size_t c = 1; c < classes; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

double DiceScores::mean() const {
  if (per_region.empty()) return 0.0;
  return std::accumulate(per_region.begin(), per_region.end(), 0.0) /
         static_cast<double>(per_region.size());
}

DiceScores score_labels(const nn::LabelBatch& pred, const nn::LabelBatch& gt, std::size_t classes) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    fail(ErrorKind::kShape, "score_labels: batch shape mismatch");
  }
  DiceScores out;
  out.per_region.assign(classes - 1, 0.0);
  const std::size_t P = pred.plane();
  if (pred.n == 0) return out;
  for (std::size_t n = 0; n < pred.n; ++n) {
    const std::span<const std::int32_t> ps(pred.data.data() + n * P, P);
    const std::span<const std::int32_t> gs(gt.data.data() + n * P, P);
    for (std::size_t r = 1; r < classes; ++r) {
      out.per_region[r - 1] += region_dice(ps, gs, static_cast<std::int32_t>(r));
    }
  }
  for (double& v : out.per_region) v /= static_cast<double>(pred.n);
  return out;
}

nn::Tensor predict_logits(const nn::ModelWeights& model, const data::ClientDataset& ds,
                          nn::Mode mode, std::size_t batch) {
  std::vector<nn::Tensor> parts;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.count(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.count(), start + batch); ++i) idx.push_back(i);
    parts.push_back(nn::infer(model, ds.images(idx), mode));
  }
  return nn::Tensor::concat_batch(parts);
}

nn::LabelBatch predict(const nn::ModelWeights& model, const data::ClientDataset& ds,
                       nn::Mode mode, std::size_t batch) {
  return nn::argmax_labels(predict_logits(model, ds, mode, batch));
}

DiceScores evaluate(const nn::ModelWeights& model, const data::ClientDataset& ds, nn::Mode mode) {
  return score_labels(predict(model, ds, mode), ds.all_labels(), ds.classes);
}

}  // namespace iopfl::eval
