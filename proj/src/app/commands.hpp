#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "app/config.hpp"
#include "eval/results.hpp"

namespace iopfl::app {

/// Federated training for every run seed. Writes into `out`:
///   config.json, run.json               resolved config and seeds
///   seed_<s>/checkpoints/global.*       best-by-validation global model
///   seed_<s>/checkpoints/pers_<c>.*     best-by-validation P_k per inside client
///   seed_<s>/trace.csv                  per-round, per-client trace
///   metrics.csv, report.json            inside Dice per seed and over seeds
std::vector<eval::MetricRow> cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                       const std::string& label = "default");

/// Test-time routing on the outside client with the checkpoints of a train
/// run. Every checkpoint is loaded and every seed computed before anything is
/// written, so a missing or incompatible member leaves no output behind.
///   config.json, run.json
///   seed_<s>/routing.csv, seed_<s>/loss.csv, seed_<s>/predictions/*.pgm
///   metrics.csv, report.json            routed/global/average/ensemble Dice
std::vector<eval::MetricRow> cmd_adapt(const ExperimentConfig& cfg,
                                       const std::filesystem::path& checkpoint_dir,
                                       const std::filesystem::path& out,
                                       const std::string& label = "default");

enum class Sweep { kTau, kLocalEpochs, kMembers, kD, kBeta };
std::string_view to_string(Sweep s);
Sweep sweep_from_string(std::string_view s);

/// Grid from the config (members: 1..K-1 when the configured grid is empty).
std::vector<double> default_grid(const ExperimentConfig& cfg, Sweep s);

/// Config of one grid point.
ExperimentConfig sweep_point(const ExperimentConfig& cfg, Sweep s, double value);

inline constexpr std::string_view kSweepHeader =
    "parameter,value,seed,inside_global,inside_personalized,outside_global,outside_average,"
    "outside_ensemble,outside_routed";

/// One train + adapt per grid point (d and beta share a single training in
/// train/). Point directories are named <parameter>=<value>. Writes
/// sweep.csv (one row per point and seed, Dice averaged over clients and
/// regions), metrics.csv and report.json. Returns the sweep.csv text.
std::string cmd_ablate(const ExperimentConfig& cfg, Sweep sweep, std::vector<double> values,
                       const std::filesystem::path& out);

inline constexpr std::string_view kLooHeader = "config,method,seed,dice";

/// Names of the leave-one-out holdouts: the inside clients of `cfg`.
std::vector<std::string> loo_holdouts(const ExperimentConfig& cfg);

/// Config of one cell: `holdout` becomes the outside client and the other
/// inside clients form the federation; single-threaded.
ExperimentConfig loo_cell(const ExperimentConfig& cfg, const std::string& holdout);

/// Holds out each inside client in turn (>= 3 required): train on the rest
/// in <client>/train, adapt in <client>/adapt. The configured outside client
/// takes no part. Cells run in parallel on the configured threads. Writes
/// metrics.csv, loo_summary.csv (one row per holdout x method x seed) and
/// loo_summary.json. Returns loo_summary.csv rows.
std::vector<eval::MetricRow> cmd_leave_one_out(const ExperimentConfig& cfg,
                                               const std::filesystem::path& out);

/// Markdown tables (clients as columns, methods as rows, mean (std) over
/// seeds) and curve CSVs for every run directory under `results`. Output is
/// a pure function of the inputs. Throws kIo when nothing is found.
void cmd_report(const std::filesystem::path& results, const std::filesystem::path& out);

}  // namespace iopfl::app
