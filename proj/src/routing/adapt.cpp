#include "routing/adapt.hpp"

#include <cmath>
#include <sstream>

#include "nn/error.hpp"
#include "nn/rng.hpp"
#include "util/format.hpp"

namespace iopfl::routing {

using nn::Tensor;

TestTimeLoss test_time_loss(const RoutingSpace& space, const CoefficientNets& nets,
                            const Tensor& x, std::uint64_t noise_seed, const TestTimeConfig& cfg,
                            bool with_grad) {
  TestTimeLoss out;
  out.clean = routed_forward(space, nets, x);
  const RoutedTape noisy = routed_forward(space, nets, perturb(x, noise_seed, cfg.sigma));
  const LossGrad cons = consistency_loss(out.clean.probs, noisy.probs);
  const LossGrad shape = shape_loss(out.clean.probs, cfg.radius);
  const LossGrad ent = entropy_loss(out.clean.probs);
  out.consistency = cons.value;
  out.shape = shape.value;
  out.entropy = ent.value;
  out.value = cons.value + cfg.beta * (shape.value + ent.value);
  if (!with_grad) return out;

  Tensor g_clean = cons.grad;
  g_clean.axpy(cfg.beta, shape.grad);
  g_clean.axpy(cfg.beta, ent.grad);
  out.grad = routed_backward(space, nets, out.clean, g_clean);
  const std::vector<double> g_noisy = routed_backward(space, nets, noisy, cons.grad_b);
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += g_noisy[i];
  return out;
}

namespace {

struct Batches {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  Batches(std::size_t n, std::size_t batch) {
    for (std::size_t s = 0; s < n; s += batch) ranges.emplace_back(s, std::min(n, s + batch));
  }
};

struct EpochScore {
  double loss = 0.0;
  Tensor probs;
  RoutingMatrix coeff;
};

EpochScore score_epoch(const RoutingSpace& space, const CoefficientNets& nets,
                       const Tensor& images, const Batches& batches, const AdaptConfig& cfg,
                       std::uint64_t seed) {
  EpochScore s;
  std::vector<Tensor> parts;
  CoefficientAccumulator acc;
  for (std::size_t b = 0; b < batches.ranges.size(); ++b) {
    const auto [lo, hi] = batches.ranges[b];
    // Fixed noise per batch so that epochs are compared on the same objective.
    const TestTimeLoss l = test_time_loss(space, nets, images.slice_batch(lo, hi),
                                          derive_seed(seed, "perturbation-eval", b), cfg.loss,
                                          false);
    s.loss += l.value * static_cast<double>(hi - lo);
    acc.add(l.clean, space.member_count());
    parts.push_back(l.clean.probs);
  }
  s.loss /= static_cast<double>(images.n());
  s.probs = Tensor::concat_batch(parts);
  s.coeff = acc.finish();
  return s;
}

}  // namespace

AdaptResult adapt(const RoutingSpace& space, const Tensor& images, const AdaptConfig& cfg,
                  std::uint64_t seed) {
  if (images.n() == 0) fail(ErrorKind::kConfig, "adapt: empty test set");
  if (cfg.batch == 0) fail(ErrorKind::kConfig, "adapt: batch size must be positive");
  const Batches batches(images.n(), cfg.batch);
  CoefficientNets nets = CoefficientNets::init(space, derive_seed(seed, "routing-init"));
  nn::AdamBuffer adam(nets.size());

  AdaptResult res;
  auto record = [&](std::size_t epoch, const EpochScore& s) {
    res.epoch_loss.push_back(s.loss);
    res.epoch_labels.push_back(nn::argmax_labels(s.probs));
    for (std::size_t j = 0; j < s.coeff.layers; ++j)
      for (std::size_t m = 0; m < s.coeff.members; ++m)
        res.coefficients.push_back({epoch, j, m, s.coeff.mean[j * s.coeff.members + m],
                                    s.coeff.stddev[j * s.coeff.members + m]});
  };

  EpochScore initial = score_epoch(space, nets, images, batches, cfg, seed);
  if (!std::isfinite(initial.loss)) fail(ErrorKind::kNumeric, "adapt: non-finite initial loss");
  record(0, initial);
  res.nets = nets;
  res.best_epoch = 0;
  res.probs = std::move(initial.probs);

  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    for (std::size_t b = 0; b < batches.ranges.size(); ++b) {
      const auto [lo, hi] = batches.ranges[b];
      const TestTimeLoss l = test_time_loss(space, nets, images.slice_batch(lo, hi),
                                            derive_seed(seed, "perturbation", e, b), cfg.loss);
      bool finite = std::isfinite(l.value);
      for (double g : l.grad) finite = finite && std::isfinite(g);
      if (!finite) {
        std::ostringstream msg;
        msg << "adapt: non-finite test-time loss at epoch " << e << ", batch " << b
            << "; epoch losses so far:";
        for (double v : res.epoch_loss) msg << ' ' << v;
        fail(ErrorKind::kNumeric, msg.str());
      }
      res.step_loss.push_back(l.value);
      adam.step(nets.params(), l.grad, cfg.optimizer);
    }
    EpochScore s = score_epoch(space, nets, images, batches, cfg, seed);
    record(e, s);
    if (s.loss < res.epoch_loss[res.best_epoch]) {
      res.best_epoch = e;
      res.nets = nets;
      res.probs = std::move(s.probs);
    }
  }
  res.labels = nn::argmax_labels(res.probs);
  return res;
}

Tensor routed_predict(const RoutingSpace& space, const CoefficientNets& nets, const Tensor& images,
                      std::size_t batch) {
  if (batch == 0) fail(ErrorKind::kConfig, "routed_predict: batch size must be positive");
  std::vector<Tensor> parts;
  for (const auto& [lo, hi] : Batches(images.n(), batch).ranges) {
    parts.push_back(routed_forward(space, nets, images.slice_batch(lo, hi)).probs);
  }
  return Tensor::concat_batch(parts);
}

void write_routing_csv(const std::filesystem::path& path, std::span<const CoefficientRecord> rows,
                       std::span<const std::string> layer_names) {
  std::string out = "epoch,layer,member,mean_coefficient,std\n";
  for (const auto& r : rows) {
    const std::string layer = r.layer < layer_names.size() ? layer_names[r.layer]
                                                           : std::to_string(r.layer);
    out += std::to_string(r.epoch) + ',' + layer + ',' + std::to_string(r.member) + ',' +
           util::num(r.mean) + ',' + util::num(r.stddev) + '\n';
  }
  util::write_text(path, out);
}

void write_loss_csv(const std::filesystem::path& path, const AdaptResult& result) {
  std::string out = "epoch,mean_loss,selected\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    out += std::to_string(e) + ',' + util::num(result.epoch_loss[e]) + ',' +
           (e == result.best_epoch ? "1" : "0") + '\n';
  }
  util::write_text(path, out);
}

}  // namespace iopfl::routing
