// Command-line front end. Talks to the library through the C API only.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "iopfl/iopfl.h"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::string out;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Experiment config (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--seeds", f.seeds, "Number of seeds (master, master+1, ...)");
  cmd->add_option("--out", f.out, "Output directory (overrides IOPFL_OUT and the config)");
  cmd->add_option("--threads", f.threads, "Worker threads (overrides IOPFL_THREADS and the config)");
}

struct Failure {
  iopfl_status status;
};

void check(iopfl_status s) {
  if (s != IOPFL_OK) throw Failure{s};
}

/// Config precedence: defaults < --config file < environment < flags.
struct Config {
  iopfl_config* handle = nullptr;
  ~Config() { iopfl_config_free(handle); }

  explicit Config(const CommonFlags& f) {
    check(f.config.empty() ? iopfl_config_default(&handle) : iopfl_config_load(f.config.c_str(), &handle));
    check(iopfl_config_apply_env(handle));
    if (f.seed) check(iopfl_config_set_seed(handle, *f.seed));
    if (f.seeds) check(iopfl_config_set_seed_count(handle, *f.seeds));
    if (!f.out.empty()) check(iopfl_config_set_output_dir(handle, f.out.c_str()));
    if (f.threads) check(iopfl_config_set_threads(handle, *f.threads));
  }

  std::string output_dir() const {
    std::size_t needed = 0;
    check(iopfl_config_output_dir(handle, nullptr, 0, &needed));
    std::string s(needed, '\0');
    check(iopfl_config_output_dir(handle, s.data(), s.size(), &needed));
    s.resize(needed - 1);
    return s;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated segmentation with inside personalization and outside test-time routing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(iopfl_version()));

  CommonFlags train_f, adapt_f, ablate_f, loo_f;
  auto* train = app.add_subcommand("train", "Federated training with personalization; inside Dice");
  add_common(train, train_f);

  auto* adapt = app.add_subcommand("adapt", "Test-time routing on the outside client; outside Dice");
  add_common(adapt, adapt_f);
  std::string checkpoints, outside;
  adapt->add_option("--checkpoints", checkpoints, "Output directory of a train run")->required();
  adapt->add_option("--outside", outside, "Outside client name (default: from the config)");

  auto* ablate = app.add_subcommand("ablate", "Parameter sweep: train + adapt per grid point");
  add_common(ablate, ablate_f);
  std::string sweep;
  std::vector<double> values;
  ablate->add_option("--sweep", sweep, "tau, local_epochs, members, d or beta")
      ->required()
      ->check(CLI::IsMember({"tau", "local_epochs", "members", "d", "beta"}));
  ablate->add_option("--values", values, "Comma-separated grid (default: from the config)")->delimiter(',');

  auto* loo = app.add_subcommand("loo", "Leave-one-client-out over every configured client");
  add_common(loo, loo_f);

  auto* report = app.add_subcommand("report", "Markdown tables and curve CSVs from result directories");
  std::string results, report_out;
  report->add_option("results", results, "Results directory")->required();
  report->add_option("--out", report_out, "Report directory (default: <results>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  std::string written;
  try {
    if (*train) {
      Config cfg(train_f);
      written = cfg.output_dir();
      check(iopfl_train(cfg.handle, written.c_str()));
    } else if (*adapt) {
      Config cfg(adapt_f);
      written = cfg.output_dir();
      check(iopfl_adapt(cfg.handle, checkpoints.c_str(), outside.empty() ? nullptr : outside.c_str(),
                        written.c_str()));
    } else if (*ablate) {
      Config cfg(ablate_f);
      written = cfg.output_dir();
      check(iopfl_ablate(cfg.handle, sweep.c_str(), values.data(), values.size(), written.c_str()));
    } else if (*loo) {
      Config cfg(loo_f);
      written = cfg.output_dir();
      check(iopfl_leave_one_out(cfg.handle, written.c_str()));
    } else if (*report) {
      written = report_out.empty() ? results + "/report" : report_out;
      check(iopfl_report(results.c_str(), written.c_str()));
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", iopfl_status_name(f.status), iopfl_last_error());
    return iopfl_exit_code(f.status);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "done in %.1f s; results in %s\n", secs, written.c_str());
  return 0;
}
