#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "data/synth.hpp"
#include "fed/personalization.hpp"
#include "nn/model.hpp"
#include "nn/optimizer.hpp"

namespace iopfl::fed {

struct ClientState {
  std::string id;
  nn::ModelWeights model;
  data::DatasetSplit data;
  nn::OptimizerConfig optimizer;  // learning_rate is the local rate
  std::size_t batch = 16;
  std::size_t local_epochs = 1;
  bool augment = true;
  /// Selects the client's shuffling/augmentation stream. Clients sharing a
  /// stream id and data draw identical minibatches.
  std::uint64_t stream_id = 0;
  /// Adam moments persist across rounds; created on first use.
  std::optional<nn::OptimizerState> optimizer_state;

  /// ceil(n_train / batch) * local_epochs
  std::size_t iterations_per_round() const;
};

struct ServerState {
  nn::ModelWeights global;
  double lr_global = 1e-3;
  std::size_t round = 0;
};

struct LocalRoundResult {
  nn::GradientSet gradient;  // sum of step gradients (sgd) or displacement / lr (adam)
  std::vector<double> losses;
  double mean_loss() const;
};

/// Runs the client's local iterations from its current model. Throws
/// ErrorKind::kNumeric naming client, round and step on a non-finite loss.
LocalRoundResult local_round(ClientState& client, std::uint64_t master_seed, std::size_t round);

/// Elementwise mean.
nn::GradientSet aggregate(std::span<const nn::GradientSet> grads);

/// w_g -= lr_global * grad; BN running statistics become the mean of the
/// given client models' statistics (left alone when none are given).
void global_update(ServerState& server, const nn::GradientSet& grad,
                   std::span<const nn::ModelWeights* const> client_models = {});

/// Where P_k's BN running statistics come from after each round.
enum class BnStatsSource {
  kLocalModel,  // copied from the client's post-round local model
  kReestimate,  // recomputed from P_k's own activations on the client's training split
};

std::string_view to_string(BnStatsSource s);
BnStatsSource bn_stats_source_from_string(std::string_view s);

struct PersonalizationConfig {
  bool enabled = true;
  double tau = 0.9;
  PersonalizationVariant variant = PersonalizationVariant::kEmaSnapshot;
  BnStatsSource bn_stats = BnStatsSource::kLocalModel;
};

struct FederationConfig {
  std::size_t rounds = 30;
  nn::OptimizerConfig local_optimizer{nn::OptimizerKind::kSgd, 0.1};
  double lr_global = 0.1;
  std::size_t local_epochs = 1;
  std::size_t batch = 16;
  bool augment = true;
  std::size_t base_width = 8;
  PersonalizationConfig personalization;
  std::size_t threads = 1;
  /// Per-round validation scoring (needed for best-checkpoint selection).
  bool evaluate = true;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
};

struct ClientInput {
  std::string id;
  data::DatasetSplit data;
  std::uint64_t stream_id = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::string client_id;
  double train_loss = 0.0;
  double val_dice = 0.0;               // global model on the client's validation split
  double val_dice_personalized = 0.0;  // P_k on the same split
};

struct FederationResult {
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<PersonalizedModel> personalized;
  /// Best checkpoints by validation Dice (earliest on ties), round 0 included.
  std::vector<BestTracker> best_personalized;
  BestTracker best_global;  // by mean validation Dice over clients
  std::vector<RoundRecord> trace;
  nn::ModelWeights initial;
  std::vector<double> initial_val_dice;
};

/// Seeded federation. Initial weights come from the "init" stream of the master seed.
FederationResult run_federation(const FederationConfig& cfg, std::vector<ClientInput> clients,
                                std::uint64_t master_seed);

/// round,client_id,train_loss,val_dice,val_dice_personalized
void write_trace_csv(const std::filesystem::path& path, std::span<const RoundRecord> trace);

}  // namespace iopfl::fed
