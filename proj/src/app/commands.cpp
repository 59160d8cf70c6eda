#include "app/commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "app/pipeline.hpp"
#include "data/synth.hpp"
#include "nn/checkpoint.hpp"
#include "nn/error.hpp"
#include "util/format.hpp"
#include "util/parallel.hpp"

namespace iopfl::app {

namespace fs = std::filesystem;

namespace {

fs::path seed_dir(const fs::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed));
}

void write_run_files(const ExperimentConfig& cfg, const fs::path& out, nlohmann::ordered_json run) {
  util::write_text(out / "config.json", to_json(cfg).dump(2) + '\n');
  run["master_seed"] = cfg.seeds.master;
  run["seeds"] = run_seeds(cfg);
  util::write_text(out / "run.json", run.dump(2) + '\n');
}

void write_results(const fs::path& out, const std::vector<eval::MetricRow>& rows) {
  eval::write_metrics_csv(out / "metrics.csv", rows);
  util::write_text(out / "report.json", eval::summary_json(eval::summarize(rows)));
}

}  // namespace

std::vector<eval::MetricRow> cmd_train(const ExperimentConfig& cfg, const fs::path& out,
                                       const std::string& label) {
  validate(cfg);
  std::vector<eval::MetricRow> rows;
  write_run_files(cfg, out, {{"command", "train"}, {"label", label}});
  for (std::uint64_t seed : run_seeds(cfg)) {
    InsideRun run = train_inside(cfg, seed, label);
    const fs::path dir = seed_dir(out, seed);
    nn::save_checkpoint(run.federation.best_global.model(), dir / "checkpoints" / kGlobalName);
    for (std::size_t k = 0; k < run.federation.best_personalized.size(); ++k) {
      nn::save_checkpoint(run.federation.best_personalized[k].model(),
                          dir / "checkpoints" / personalized_name(run.clients[k]));
    }
    fed::write_trace_csv(dir / "trace.csv", run.federation.trace);
    rows.insert(rows.end(), run.rows.begin(), run.rows.end());
  }
  write_results(out, rows);
  return rows;
}

std::vector<eval::MetricRow> cmd_adapt(const ExperimentConfig& cfg, const fs::path& checkpoint_dir,
                                       const fs::path& out, const std::string& label) {
  validate(cfg);
  const auto seeds = run_seeds(cfg);
  const auto inside = inside_indices(cfg);

  // Load and check everything before the first write.
  std::vector<std::vector<nn::ModelWeights>> members(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const fs::path dir = seed_dir(checkpoint_dir, seeds[s]) / "checkpoints";
    std::vector<std::string> names;
    for (std::size_t i : inside) names.push_back(personalized_name(cfg.data.clients[i].name));
    names.push_back(kGlobalName);
    for (const auto& n : names) {
      if (!nn::checkpoint_exists(dir / n)) {
        fail(ErrorKind::kIo, "adapt: missing member checkpoint " + (dir / n).string());
      }
      members[s].push_back(nn::load_checkpoint(dir / n));
      if (members[s].back().architecture_id() != members[s].front().architecture_id()) {
        fail(ErrorKind::kShape, "adapt: checkpoint " + (dir / n).string() +
                                    " has a different architecture id than " +
                                    (dir / names.front()).string());
      }
      nn::require_congruent(members[s].front(), members[s].back(), (dir / n).string());
    }
  }

  const std::size_t oi = outside_index(cfg);
  std::vector<OutsideRun> runs;
  std::vector<data::ClientDataset> outside;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    outside.push_back(make_client(cfg, oi, seeds[s]).full);
    runs.push_back(adapt_outside(cfg, std::move(members[s]), outside.back(), cfg.data.outside_client,
                                 seeds[s], label));
  }

  write_run_files(cfg, out,
                  {{"command", "adapt"}, {"label", label}, {"checkpoints", checkpoint_dir.string()}});
  std::vector<eval::MetricRow> rows;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const fs::path dir = seed_dir(out, seeds[s]);
    const auto& a = runs[s].adapt;
    routing::write_routing_csv(dir / "routing.csv", a.coefficients, runs[s].layer_names);
    routing::write_loss_csv(dir / "loss.csv", a);
    const std::size_t S = cfg.data.image_size, P = S * S;
    fs::create_directories(dir / "predictions");
    for (std::size_t n = 0; n < a.labels.n; ++n) {
      const std::span<const std::int32_t> lab(a.labels.data.data() + n * P, P);
      char name[32];
      std::snprintf(name, sizeof name, "pred_%03zu.pgm", n);
      data::write_pgm(dir / "predictions" / name, S, S, data::label_pixels(lab, cfg.data.classes));
    }
    rows.insert(rows.end(), runs[s].rows.begin(), runs[s].rows.end());
  }
  write_results(out, rows);
  return rows;
}

std::string_view to_string(Sweep s) {
  switch (s) {
    case Sweep::kTau: return "tau";
    case Sweep::kLocalEpochs: return "local_epochs";
    case Sweep::kMembers: return "members";
    case Sweep::kD: return "d";
    case Sweep::kBeta: return "beta";
  }
  return "?";
}

Sweep sweep_from_string(std::string_view s) {
  for (Sweep v : {Sweep::kTau, Sweep::kLocalEpochs, Sweep::kMembers, Sweep::kD, Sweep::kBeta}) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorKind::kConfig,
       "unknown sweep '" + std::string(s) + "' (expected tau, local_epochs, members, d or beta)");
}

std::vector<double> default_grid(const ExperimentConfig& cfg, Sweep s) {
  switch (s) {
    case Sweep::kTau: return cfg.ablation.tau;
    case Sweep::kLocalEpochs: return cfg.ablation.local_epochs;
    case Sweep::kD: return cfg.ablation.d;
    case Sweep::kBeta: return cfg.ablation.beta;
    case Sweep::kMembers: {
      if (!cfg.ablation.members.empty()) return cfg.ablation.members;
      std::vector<double> g;
      const std::size_t K = inside_indices(cfg).size();
      for (std::size_t m = 1; m + 1 <= K; ++m) g.push_back(static_cast<double>(m));
      return g;
    }
  }
  return {};
}

ExperimentConfig sweep_point(const ExperimentConfig& cfg, Sweep s, double v) {
  ExperimentConfig p = cfg;
  auto as_count = [&](const char* what) {
    if (!(v >= 1.0 && v == std::floor(v)))
      fail(ErrorKind::kConfig, std::string("sweep ") + what + ": values must be positive integers");
    return static_cast<std::size_t>(v);
  };
  switch (s) {
    case Sweep::kTau: p.federation.personalization.tau = v; break;
    case Sweep::kLocalEpochs: p.federation.local_epochs = as_count("local_epochs"); break;
    case Sweep::kD: p.routing.adapt.loss.radius = as_count("d"); break;
    case Sweep::kBeta: p.routing.adapt.loss.beta = v; break;
    case Sweep::kMembers: {
      const std::size_t m = as_count("members");
      const auto inside = inside_indices(cfg);
      if (m > inside.size()) {
        fail(ErrorKind::kConfig, "sweep members: " + std::to_string(m) + " exceeds the " +
                                     std::to_string(inside.size()) + " inside clients");
      }
      p.data.inside_clients.clear();
      for (std::size_t i = 0; i < m; ++i) p.data.inside_clients.push_back(cfg.data.clients[inside[i]].name);
      break;
    }
  }
  validate(p);
  return p;
}

namespace {

constexpr const char* kSweepMethods[] = {"inside/global",   "inside/personalized", "outside/global",
                                         "outside/average", "outside/ensemble",    "outside/routed"};

/// Per (config, seed): Dice averaged over clients and regions, per method.
std::map<std::pair<std::string, std::uint64_t>, std::map<std::string, double>> per_seed(
    std::span<const eval::MetricRow> rows) {
  std::map<std::pair<std::string, std::uint64_t>, std::map<std::string, double>> out;
  for (const auto& r : eval::collapse_clients(rows)) {
    out[{r.config, r.seed}][r.phase + "/" + r.method] = r.dice;
  }
  return out;
}

std::vector<eval::MetricRow> relabel(std::vector<eval::MetricRow> rows, const std::string& label) {
  for (auto& r : rows) r.config = label;
  return rows;
}

}  // namespace

std::string cmd_ablate(const ExperimentConfig& cfg, Sweep sweep, std::vector<double> values,
                       const fs::path& out) {
  validate(cfg);
  if (values.empty()) values = default_grid(cfg, sweep);
  if (values.empty()) fail(ErrorKind::kConfig, "ablate: empty grid for " + std::string(to_string(sweep)));
  std::vector<ExperimentConfig> points;
  for (double v : values) points.push_back(sweep_point(cfg, sweep, v));

  const std::string param(to_string(sweep));
  auto point_name = [&](double v) { return param + "=" + util::num(v); };
  const bool shared_training = sweep == Sweep::kD || sweep == Sweep::kBeta;

  nlohmann::ordered_json run{{"command", "ablate"}, {"sweep", param}, {"values", values}};
  write_run_files(cfg, out, run);

  std::vector<eval::MetricRow> inside_shared;
  if (shared_training) inside_shared = cmd_train(cfg, out / "train");

  std::vector<eval::MetricRow> all;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const fs::path dir = out / point_name(values[i]);
    std::vector<eval::MetricRow> inside = inside_shared;
    fs::path train_dir = out / "train";
    if (!shared_training) {
      train_dir = dir / "train";
      inside = cmd_train(points[i], train_dir);
    }
    const auto outside = cmd_adapt(points[i], train_dir, dir / "adapt");
    const auto a = relabel(inside, point_name(values[i]));
    const auto b = relabel(outside, point_name(values[i]));
    all.insert(all.end(), a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
  }
  write_results(out, all);

  const auto table = per_seed(all);
  std::string csv(kSweepHeader);
  csv += '\n';
  for (double v : values) {
    for (std::uint64_t seed : run_seeds(cfg)) {
      const auto it = table.find({point_name(v), seed});
      csv += param + ',' + util::num(v) + ',' + std::to_string(seed);
      for (const char* m : kSweepMethods) {
        csv += ',';
        if (it != table.end() && it->second.count(m)) csv += util::num(it->second.at(m));
      }
      csv += '\n';
    }
  }
  util::write_text(out / "sweep.csv", csv);
  return csv;
}

std::vector<std::string> loo_holdouts(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t i : inside_indices(cfg)) out.push_back(cfg.data.clients[i].name);
  return out;
}

ExperimentConfig loo_cell(const ExperimentConfig& cfg, const std::string& holdout) {
  const auto names = loo_holdouts(cfg);
  if (std::find(names.begin(), names.end(), holdout) == names.end()) {
    fail(ErrorKind::kConfig, "leave-one-out: '" + holdout + "' is not an inside client");
  }
  ExperimentConfig cell = cfg;
  cell.data.outside_client = holdout;
  cell.data.inside_clients.clear();
  for (const auto& n : names)
    if (n != holdout) cell.data.inside_clients.push_back(n);
  cell.threads = 1;
  validate(cell);
  return cell;
}

std::vector<eval::MetricRow> cmd_leave_one_out(const ExperimentConfig& cfg, const fs::path& out) {
  validate(cfg);
  const auto holdouts = loo_holdouts(cfg);
  const std::size_t n = holdouts.size();
  if (n < 3) {
    fail(ErrorKind::kConfig, "leave-one-out needs at least 3 inside clients, got " + std::to_string(n));
  }
  std::vector<ExperimentConfig> cells;
  for (const auto& h : holdouts) cells.push_back(loo_cell(cfg, h));
  write_run_files(cfg, out, {{"command", "loo"}});

  std::vector<std::vector<eval::MetricRow>> results(n);
  util::parallel_for(n, cfg.threads, [&](std::size_t h) {
    const std::string& name = holdouts[h];
    const fs::path dir = out / name;
    results[h] = cmd_train(cells[h], dir / "train", name);
    const auto outside = cmd_adapt(cells[h], dir / "train", dir / "adapt", name);
    results[h].insert(results[h].end(), outside.begin(), outside.end());
  });

  std::vector<eval::MetricRow> all;
  for (const auto& r : results) all.insert(all.end(), r.begin(), r.end());
  write_results(out, all);

  const auto collapsed = eval::collapse_clients(all);
  std::string csv(kLooHeader);
  csv += '\n';
  for (const auto& r : collapsed) {
    csv += r.config + ',' + r.phase + '/' + r.method + ',' + std::to_string(r.seed) + ',' +
           util::num(r.dice) + '\n';
  }
  util::write_text(out / "loo_summary.csv", csv);
  util::write_text(out / "loo_summary.json", eval::summary_json(eval::summarize(collapsed)));
  return collapsed;
}

}  // namespace iopfl::app
