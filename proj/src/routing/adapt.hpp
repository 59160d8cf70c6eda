#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nn/losses.hpp"
#include "nn/optimizer.hpp"
#include "routing/losses.hpp"
#include "routing/space.hpp"

namespace iopfl::routing {

struct TestTimeConfig {
  double beta = 0.01;
  std::size_t radius = 2;
  double sigma = 0.5;
};

struct TestTimeLoss {
  double value = 0.0;
  double consistency = 0.0, shape = 0.0, entropy = 0.0;
  std::vector<double> grad;  // w.r.t. coefficient-net parameters
  RoutedTape clean;
};

/// L = cons(p(x), p(x + eps)) + beta * (shape(p(x)) + entropy(p(x))).
/// Both branches are differentiated; members stay frozen.
TestTimeLoss test_time_loss(const RoutingSpace& space, const CoefficientNets& nets,
                            const nn::Tensor& x, std::uint64_t noise_seed,
                            const TestTimeConfig& cfg, bool with_grad = true);

struct AdaptConfig {
  std::size_t epochs = 10;
  std::size_t batch = 4;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::kAdam, 1e-3};
  TestTimeConfig loss;
};

struct CoefficientRecord {
  std::size_t epoch = 0;
  std::size_t layer = 0;   // routable layer ordinal
  std::size_t member = 0;
  double mean = 0.0, stddev = 0.0;
};

struct AdaptResult {
  CoefficientNets nets;           // parameters of the selected epoch
  std::size_t best_epoch = 0;
  /// Mean unsupervised loss over the test set after each epoch; entry 0 is
  /// the initial (pre-update) state.
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;  // per optimizer step
  nn::Tensor probs;               // predictions of the selected epoch
  nn::LabelBatch labels;          // argmax of probs
  std::vector<CoefficientRecord> coefficients;
  std::vector<nn::LabelBatch> epoch_labels;  // predictions of every epoch, for audit
};

/// Optimizes the coefficient nets on unlabeled images with Adam over fixed
/// consecutive batches. After each epoch the full set is scored with fixed
/// per-batch noise; the lowest-loss epoch (earliest on ties) supplies the
/// returned nets and predictions. Throws kNumeric on a non-finite loss.
AdaptResult adapt(const RoutingSpace& space, const nn::Tensor& images, const AdaptConfig& cfg,
                  std::uint64_t seed);

/// Routed probabilities with fixed consecutive batches (BN batch statistics
/// are per batch).
nn::Tensor routed_predict(const RoutingSpace& space, const CoefficientNets& nets,
                          const nn::Tensor& images, std::size_t batch);

void write_routing_csv(const std::filesystem::path& path, std::span<const CoefficientRecord> rows,
                       std::span<const std::string> layer_names);
void write_loss_csv(const std::filesystem::path& path, const AdaptResult& result);

}  // namespace iopfl::routing
