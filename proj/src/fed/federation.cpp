#include "fed/federation.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "eval/metrics.hpp"
#include "nn/checkpoint.hpp"
#include "nn/error.hpp"
#include "nn/losses.hpp"
#include "nn/network.hpp"
#include "nn/rng.hpp"
#include "util/format.hpp"
#include "util/parallel.hpp"

namespace iopfl::fed {

using nn::GradientSet;
using nn::ModelWeights;

std::string_view to_string(BnStatsSource s) {
  return s == BnStatsSource::kLocalModel ? "local-model" : "reestimate";
}

BnStatsSource bn_stats_source_from_string(std::string_view s) {
  if (s == "local-model") return BnStatsSource::kLocalModel;
  if (s == "reestimate") return BnStatsSource::kReestimate;
  fail(ErrorKind::kConfig, "unknown bn_stats source '" + std::string(s) +
                               "' (expected local-model or reestimate)");
}

std::size_t ClientState::iterations_per_round() const {
  if (batch == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  const std::size_t n = data.train.count();
  return (n + batch - 1) / batch * local_epochs;
}

double LocalRoundResult::mean_loss() const {
  if (losses.empty()) return 0.0;
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

namespace {

struct Minibatch {
  nn::Tensor images;
  nn::LabelBatch labels;
};

Minibatch make_batch(const data::ClientDataset& ds, std::span<const std::size_t> idx, bool aug,
                     Rng& rng) {
  const std::size_t S = ds.size, P = S * S;
  Minibatch b;
  b.images = nn::Tensor({idx.size(), 1, S, S});
  b.labels.n = idx.size();
  b.labels.h = b.labels.w = S;
  b.labels.data.resize(idx.size() * P);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const data::SegmentationSample& src = ds.samples[idx[i]];
    // Draw the augmentation seed unconditionally so the shuffle stream does
    // not depend on whether augmentation is enabled.
    const std::uint64_t aseed = rng.next();
    const data::SegmentationSample s = aug ? data::augment(src, aseed) : src;
    std::copy(s.image.raw().begin(), s.image.raw().end(), b.images.data() + i * P);
    std::copy(s.mask.begin(), s.mask.end(), b.labels.data.begin() + static_cast<std::ptrdiff_t>(i * P));
  }
  return b;
}

}  // namespace

LocalRoundResult local_round(ClientState& client, std::uint64_t master_seed, std::size_t round) {
  const std::size_t n = client.data.train.count();
  LocalRoundResult result;
  result.gradient = GradientSet::zeros_like(client.model);
  if (client.local_epochs == 0 || n == 0) return result;
  if (client.batch == 0) fail(ErrorKind::kConfig, "batch size must be positive");

  if (!client.optimizer_state) client.optimizer_state.emplace(client.model, client.optimizer);
  nn::OptimizerState& opt = *client.optimizer_state;
  const bool sgd = client.optimizer.kind == nn::OptimizerKind::kSgd;
  const ModelWeights before = sgd ? ModelWeights{} : client.model;

  Rng rng(derive_seed(master_seed, "training", client.stream_id, round));
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < client.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += client.batch, ++step) {
      const std::size_t end = std::min(n, start + client.batch);
      const Minibatch b = make_batch(client.data.train,
                                     std::span(order).subspan(start, end - start),
                                     client.augment, rng);
      const nn::Tape tape = nn::forward(client.model, b.images, nn::Mode::kTrain);
      const nn::SupervisedLoss loss = nn::segmentation_loss(tape.logits(), b.labels);
      auto diverged = [&](const char* what) {
        std::ostringstream msg;
        msg << "non-finite " << what << ": client '" << client.id << "', round " << round
            << ", step " << step << " (loss " << loss.value << ")";
        fail(ErrorKind::kNumeric, msg.str());
      };
      // The loss clamps probabilities, so non-finite logits are checked directly.
      if (!std::isfinite(loss.value) || !tape.logits().all_finite()) diverged("training loss");
      result.losses.push_back(loss.value);
      const GradientSet g = nn::backward(tape, loss.grad_logits);
      if (!g.all_finite()) diverged("gradient");
      opt.apply(client.model, g);
      if (sgd) result.gradient += g;
    }
  }
  if (!sgd) result.gradient = nn::displacement(before, client.model, client.optimizer.learning_rate);
  return result;
}

GradientSet aggregate(std::span<const GradientSet> grads) {
  if (grads.empty()) fail(ErrorKind::kState, "aggregate: no client gradients");
  GradientSet mean = grads[0];  // shape template; every value is overwritten
  for (const GradientSet& g : grads) {
    if (!g.congruent(grads[0])) fail(ErrorKind::kShape, "aggregate: incongruent client gradients");
  }
  // Sum in client order, then one division, so the result does not depend on scheduling.
  for (std::size_t l = 0; l < mean.layers().size(); ++l) {
    for (std::size_t s = 0; s < mean.layers()[l].size(); ++s) {
      auto out = mean.at(l, s).values();
      for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (const GradientSet& g : grads) acc += g.at(l, s)[i];
        out[i] = acc / static_cast<double>(grads.size());
      }
    }
  }
  return mean;
}

void global_update(ServerState& server, const GradientSet& grad,
                   std::span<const ModelWeights* const> client_models) {
  if (!grad.congruent(server.global)) fail(ErrorKind::kShape, "global_update: gradient mismatch");
  auto& layers = server.global.mutable_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t s = 0; s < layers[l].spec.trainable_count(); ++s) {
      layers[l].params[s].axpy(-server.lr_global, grad.at(l, s));
    }
  }
  if (!client_models.empty()) {
    const double k = static_cast<double>(client_models.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].spec.kind != nn::LayerKind::kBatchNorm) continue;
      for (std::size_t s : {nn::kRunningMean, nn::kRunningVar}) {
        auto out = layers[l].params[s].values();
        for (std::size_t i = 0; i < out.size(); ++i) {
          double acc = 0.0;
          for (const ModelWeights* m : client_models) {
            nn::require_congruent(server.global, *m, "client model");
            acc += m->layer(l).params[s][i];
          }
          out[i] = acc / k;
        }
      }
    }
  }
  ++server.round;
}

FederationResult run_federation(const FederationConfig& cfg, std::vector<ClientInput> inputs,
                                std::uint64_t master_seed) {
  if (inputs.empty()) fail(ErrorKind::kConfig, "federation needs at least one client");
  const std::size_t classes = inputs[0].data.train.classes;
  for (const auto& c : inputs) {
    if (c.data.train.classes != classes) fail(ErrorKind::kConfig, "clients disagree on class count");
  }

  FederationResult res;
  res.initial = nn::build_tiny_unet(1, classes, cfg.base_width, derive_seed(master_seed, "init"));
  res.server.global = res.initial;
  res.server.lr_global = cfg.lr_global;

  const std::size_t K = inputs.size();
  for (auto& in : inputs) {
    ClientState c;
    c.id = in.id;
    c.model = res.initial;
    c.data = std::move(in.data);
    c.optimizer = cfg.local_optimizer;
    c.batch = cfg.batch;
    c.local_epochs = cfg.local_epochs;
    c.augment = cfg.augment;
    c.stream_id = in.stream_id;
    res.clients.push_back(std::move(c));
    if (cfg.personalization.enabled) {
      res.personalized.push_back(
          init_personalized(res.initial, cfg.personalization.tau, cfg.personalization.variant));
    }
  }
  res.best_personalized.resize(res.personalized.size());

  auto val_score = [](const ModelWeights& m, const data::ClientDataset& ds) {
    return ds.empty() ? 0.0 : eval::evaluate(m, ds).mean();
  };
  auto mean_of = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };

  if (cfg.evaluate) {
    res.initial_val_dice.resize(K);
    util::parallel_for(K, cfg.threads, [&](std::size_t k) {
      res.initial_val_dice[k] = val_score(res.initial, res.clients[k].data.val);
    });
    res.best_global.offer(0, mean_of(res.initial_val_dice), res.initial);
    for (std::size_t k = 0; k < res.personalized.size(); ++k) {
      res.best_personalized[k].offer(0, res.initial_val_dice[k], res.initial);
    }
  }

  const double eta_l = cfg.local_optimizer.learning_rate;
  std::vector<LocalRoundResult> local(K);
  std::vector<double> global_dice(K), pers_dice(K);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const ModelWeights round_start = res.server.global;
    util::parallel_for(K, cfg.threads, [&](std::size_t k) {
      ClientState& c = res.clients[k];
      c.model = round_start;  // broadcast
      local[k] = local_round(c, master_seed, t);
    });

    std::vector<GradientSet> grads;
    grads.reserve(K);
    for (auto& r : local) grads.push_back(r.gradient);
    const GradientSet g_global = aggregate(grads);
    std::vector<const ModelWeights*> models;
    for (const auto& c : res.clients) models.push_back(&c.model);
    global_update(res.server, g_global, models);

    util::parallel_for(res.personalized.size(), cfg.threads, [&](std::size_t k) {
      personalize_step(res.personalized[k], grads[k], g_global, eta_l, cfg.lr_global, round_start,
                       &res.clients[k].model);
      const auto& train = res.clients[k].data.train;
      if (cfg.personalization.bn_stats == BnStatsSource::kReestimate && !train.empty()) {
        nn::estimate_bn_statistics(res.personalized[k].model, train.all_images());
      }
    });

    if (cfg.evaluate) {
      util::parallel_for(K, cfg.threads, [&](std::size_t k) {
        const auto& val = res.clients[k].data.val;
        global_dice[k] = val_score(res.server.global, val);
        pers_dice[k] = res.personalized.empty() ? 0.0 : val_score(res.personalized[k].model, val);
      });
      res.best_global.offer(t, mean_of(global_dice), res.server.global);
      for (std::size_t k = 0; k < res.personalized.size(); ++k) {
        res.best_personalized[k].offer(t, pers_dice[k], res.personalized[k].model);
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      res.trace.push_back({t, res.clients[k].id, local[k].mean_loss(), global_dice[k], pers_dice[k]});
    }

    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "global_r%03zu", t);
      nn::save_checkpoint(res.server.global, cfg.checkpoint_dir / name);
    }
  }
  return res;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const RoundRecord> trace) {
  std::string out = "round,client_id,train_loss,val_dice,val_dice_personalized\n";
  for (const auto& r : trace) {
    out += std::to_string(r.round) + ',' + r.client_id + ',' + util::num(r.train_loss) + ',' +
           util::num(r.val_dice) + ',' + util::num(r.val_dice_personalized) + '\n';
  }
  util::write_text(path, out);
}

}  // namespace iopfl::fed
