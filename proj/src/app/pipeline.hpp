#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "app/config.hpp"
#include "eval/results.hpp"
#include "fed/federation.hpp"
#include "routing/adapt.hpp"

namespace iopfl::app {

struct ClientData {
  std::string name;
  std::size_t index = 0;  // position in data.clients; keys the data streams
  data::ClientDataset full;
  data::DatasetSplit split;
};

/// Generates one client from the ("data", index) and ("split", index)
/// streams of `seed`, so a client's data does not depend on which other
/// clients take part.
ClientData make_client(const ExperimentConfig& cfg, std::size_t index, std::uint64_t seed);

/// Checkpoint names inside a seed directory.
std::string personalized_name(const std::string& client);
inline constexpr const char* kGlobalName = "global";

struct InsideRun {
  fed::FederationResult federation;
  std::vector<std::string> clients;
  /// Best-by-validation P_k per inside client, then the best global model.
  std::vector<nn::ModelWeights> members;
  std::vector<eval::MetricRow> rows;
};

/// Federation on the inside clients of `cfg`, scored on each client's test
/// split: methods "global" and "personalized" (plus "single-site" when
/// enabled). BN uses running statistics.
InsideRun train_inside(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& label);

struct OutsideRun {
  routing::AdaptResult adapt;
  std::vector<eval::MetricRow> rows;
  std::vector<std::string> layer_names;  // routable layers
};

/// Test-time routing over `members` (K personalized + global last) on every
/// sample of `outside`, plus the global, average and ensemble baselines.
/// Only the images reach the adaptation; labels are used for scoring alone.
OutsideRun adapt_outside(const ExperimentConfig& cfg, std::vector<nn::ModelWeights> members,
                         const data::ClientDataset& outside, const std::string& outside_name,
                         std::uint64_t seed, const std::string& label);

}  // namespace iopfl::app
