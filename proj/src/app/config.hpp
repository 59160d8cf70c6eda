#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "data/synth.hpp"
#include "fed/federation.hpp"
#include "nn/network.hpp"
#include "routing/adapt.hpp"

namespace iopfl::app {

struct SeedConfig {
  std::uint64_t master = 1;
  std::size_t count = 3;  // runs use seeds master, master+1, ...
};

struct DataConfig {
  std::size_t classes = 2;
  std::size_t image_size = 32;
  std::size_t samples_per_client = 60;
  data::SplitFractions split;
  std::vector<data::ClientShift> clients = data::default_client_shifts();
  std::string outside_client = "outside";
  /// Empty: every client except the outside one, in client order.
  std::vector<std::string> inside_clients;
};

struct RoutingSettings {
  routing::AdaptConfig adapt;
  /// BN mode of the outside baselines. Batch statistics over the same fixed
  /// batches as the routed model make the comparison like-for-like.
  nn::Mode baseline_bn = nn::Mode::kBatchStats;
};

/// Default grids for cmd_ablate; an empty member grid means 1..K-1.
struct AblationGrids {
  std::vector<double> tau{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> local_epochs{1, 2, 4, 8, 10};
  std::vector<double> members;
  std::vector<double> d{1, 2, 3};
  std::vector<double> beta{0.001, 0.01, 0.1};
};

struct ExperimentConfig {
  SeedConfig seeds;
  DataConfig data;
  fed::FederationConfig federation;
  bool single_site_baseline = false;
  RoutingSettings routing;
  AblationGrids ablation;
  std::filesystem::path output_dir = "runs";
  std::size_t threads = 1;
};

/// Parses a (possibly partial) config over the defaults. Unknown keys,
/// wrong types and out-of-range values throw kConfig naming the field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config; parse_config(to_json(c)) reproduces c.
nlohmann::ordered_json to_json(const ExperimentConfig& c);

/// Range and cross-field checks; parse_config calls this.
void validate(const ExperimentConfig& c);

/// IOPFL_OUT sets the output directory, IOPFL_THREADS the thread count.
/// No other setting can come from the environment.
void apply_env_overrides(ExperimentConfig& c);

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& c);

/// Indices into data.clients.
std::size_t outside_index(const ExperimentConfig& c);
std::vector<std::size_t> inside_indices(const ExperimentConfig& c);

}  // namespace iopfl::app
