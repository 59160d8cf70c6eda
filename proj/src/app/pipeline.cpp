#include "app/pipeline.hpp"

#include "eval/baselines.hpp"
#include "eval/metrics.hpp"
#include "nn/error.hpp"
#include "nn/rng.hpp"

namespace iopfl::app {

ClientData make_client(const ExperimentConfig& cfg, std::size_t index, std::uint64_t seed) {
  data::ClientShift shift = cfg.data.clients.at(index);
  shift.n_samples = cfg.data.samples_per_client;
  ClientData c;
  c.name = shift.name;
  c.index = index;
  c.full = data::generate_client(shift, cfg.data.classes, cfg.data.image_size,
                                 derive_seed(seed, "data", index));
  c.split = data::split(c.full, cfg.data.split, derive_seed(seed, "split", index));
  return c;
}

std::string personalized_name(const std::string& client) { return "pers_" + client; }

namespace {

void push_scores(std::vector<eval::MetricRow>& rows, const std::string& label, std::uint64_t seed,
                 const std::string& phase, const std::string& client, const std::string& method,
                 const eval::DiceScores& s, std::size_t classes) {
  const auto names = eval::region_names(classes);
  for (std::size_t r = 0; r < s.per_region.size(); ++r) {
    rows.push_back({label, seed, phase, client, method, names[r], s.per_region[r]});
  }
}

}  // namespace

InsideRun train_inside(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& label) {
  fed::FederationConfig fc = cfg.federation;
  fc.threads = cfg.threads;
  fc.evaluate = true;

  std::vector<fed::ClientInput> inputs;
  for (std::size_t i : inside_indices(cfg)) {
    ClientData c = make_client(cfg, i, seed);
    if (c.split.train.empty()) fail(ErrorKind::kConfig, "client '" + c.name + "' has an empty training split");
    inputs.push_back({c.name, std::move(c.split), i});
  }

  InsideRun run;
  for (const auto& in : inputs) run.clients.push_back(in.id);
  std::vector<fed::ClientInput> single_inputs;
  if (cfg.single_site_baseline) single_inputs = inputs;
  run.federation = fed::run_federation(fc, std::move(inputs), seed);
  const auto& res = run.federation;

  for (std::size_t k = 0; k < res.best_personalized.size(); ++k) {
    run.members.push_back(res.best_personalized[k].model());
  }
  run.members.push_back(res.best_global.model());

  const std::size_t classes = cfg.data.classes;
  for (std::size_t k = 0; k < res.clients.size(); ++k) {
    const auto& test = res.clients[k].data.test;
    const std::string& id = run.clients[k];
    push_scores(run.rows, label, seed, "inside", id, "global",
                eval::evaluate(res.best_global.model(), test), classes);
    if (!res.best_personalized.empty()) {
      push_scores(run.rows, label, seed, "inside", id, "personalized",
                  eval::evaluate(res.best_personalized[k].model(), test), classes);
    }
  }

  // Local training only: one client, eta_g = eta_l, so the "global" model is
  // the client's own SGD trajectory.
  for (auto& in : single_inputs) {
    fed::FederationConfig sc = fc;
    sc.lr_global = fc.local_optimizer.learning_rate;
    sc.personalization.enabled = false;
    sc.checkpoint_every = 0;
    const std::string id = in.id;
    const auto solo = fed::run_federation(sc, {std::move(in)}, seed);
    push_scores(run.rows, label, seed, "inside", id, "single-site",
                eval::evaluate(solo.best_global.model(), solo.clients[0].data.test), classes);
  }
  return run;
}

OutsideRun adapt_outside(const ExperimentConfig& cfg, std::vector<nn::ModelWeights> members,
                         const data::ClientDataset& outside, const std::string& outside_name,
                         std::uint64_t seed, const std::string& label) {
  if (outside.empty()) fail(ErrorKind::kConfig, "outside client '" + outside_name + "' has no samples");
  const routing::RoutingSpace space(std::move(members));
  OutsideRun run;
  for (std::size_t l : space.routable()) run.layer_names.push_back(space.global().layer(l).name);

  const routing::AdaptConfig& ac = cfg.routing.adapt;
  run.adapt = routing::adapt(space, outside.all_images(), ac, seed);

  const std::size_t classes = cfg.data.classes;
  const nn::LabelBatch gt = outside.all_labels();
  const nn::Mode mode = cfg.routing.baseline_bn;
  const auto& ms = space.members();
  push_scores(run.rows, label, seed, "outside", outside_name, "routed",
              eval::score_labels(run.adapt.labels, gt, classes), classes);
  push_scores(run.rows, label, seed, "outside", outside_name, "global",
              eval::score_labels(eval::predict(space.global(), outside, mode, ac.batch), gt, classes),
              classes);
  push_scores(run.rows, label, seed, "outside", outside_name, "average",
              eval::baseline_average(ms, outside, mode, ac.batch).mean, classes);
  push_scores(run.rows, label, seed, "outside", outside_name, "ensemble",
              eval::baseline_ensemble(ms, outside, mode, ac.batch), classes);
  return run;
}

}  // namespace iopfl::app
