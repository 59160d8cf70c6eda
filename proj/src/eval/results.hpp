#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iopfl::eval {

/// One Dice value in long format. `config` names the experiment
/// configuration (e.g. "default", a held-out client, or "tau=0.5"),
/// `phase` is "inside" or "outside".
struct MetricRow {
  std::string config;
  std::uint64_t seed = 0;
  std::string phase;
  std::string client;
  std::string method;
  std::string region;
  double dice = 0.0;

  bool operator==(const MetricRow&) const = default;
};

inline constexpr std::string_view kMetricsHeader = "config,seed,phase,client,method,region,dice";

std::string metrics_csv(std::span<const MetricRow> rows);
/// Inverse of metrics_csv. Throws kIo on a malformed header or line.
std::vector<MetricRow> parse_metrics_csv(std::string_view text);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

/// Mean over clients and regions for each (config, seed, phase, method), in
/// order of first appearance. client and region are set to "mean".
std::vector<MetricRow> collapse_clients(std::span<const MetricRow> rows);

/// Statistics of one cell over seeds.
struct SummaryCell {
  std::string config, phase, client, method, region;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;  // in seed order of appearance
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single seed
};

/// Groups rows by everything but the seed, in order of first appearance.
std::vector<SummaryCell> summarize(std::span<const MetricRow> rows);

/// JSON summary: {"cells": [{config, phase, client, method, region, seeds,
/// values, mean, std}, ...]}.
std::string summary_json(std::span<const SummaryCell> cells);

}  // namespace iopfl::eval
