#include "iopfl/iopfl.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "app/commands.hpp"
#include "app/config.hpp"
#include "eval/metrics.hpp"
#include "nn/checkpoint.hpp"
#include "nn/error.hpp"
#include "nn/model.hpp"
#include "nn/network.hpp"

struct iopfl_config {
  iopfl::app::ExperimentConfig value;
};

struct iopfl_model {
  iopfl::nn::ModelWeights value;
};

namespace {

thread_local std::string g_last_error;

iopfl_status to_status(iopfl::ErrorKind k) {
  switch (k) {
    case iopfl::ErrorKind::kConfig: return IOPFL_ERR_CONFIG;
    case iopfl::ErrorKind::kShape: return IOPFL_ERR_SHAPE;
    case iopfl::ErrorKind::kNumeric: return IOPFL_ERR_NUMERIC;
    case iopfl::ErrorKind::kIo: return IOPFL_ERR_IO;
    case iopfl::ErrorKind::kState: return IOPFL_ERR_STATE;
  }
  return IOPFL_ERR_INTERNAL;
}

iopfl_status set_error(iopfl_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

/// Runs fn, translating exceptions into status codes.
template <class Fn>
iopfl_status guarded(Fn&& fn) {
  try {
    fn();
    return IOPFL_OK;
  } catch (const iopfl::Error& e) {
    return set_error(to_status(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(IOPFL_ERR_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(IOPFL_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return set_error(IOPFL_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(IOPFL_ERR_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  if (!p) iopfl::fail(iopfl::ErrorKind::kConfig, std::string(what) + " must not be NULL");
}

iopfl_status copy_string(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  if (buf && cap < s.size() + 1) return set_error(IOPFL_ERR_CONFIG, "buffer too small");
  return IOPFL_OK;
}

}  // namespace

extern "C" {

const char* iopfl_version(void) { return "0.1.0"; }

const char* iopfl_last_error(void) { return g_last_error.c_str(); }

const char* iopfl_status_name(iopfl_status s) {
  switch (s) {
    case IOPFL_OK: return "ok";
    case IOPFL_ERR_CONFIG: return "config error";
    case IOPFL_ERR_SHAPE: return "shape error";
    case IOPFL_ERR_NUMERIC: return "numerical failure";
    case IOPFL_ERR_IO: return "i/o error";
    case IOPFL_ERR_STATE: return "state error";
    case IOPFL_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

int iopfl_exit_code(iopfl_status s) {
  if (s == IOPFL_OK) return 0;
  return s == IOPFL_ERR_NUMERIC ? 2 : 1;
}

iopfl_status iopfl_config_default(iopfl_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new iopfl_config{};
  });
}

iopfl_status iopfl_config_load(const char* path, iopfl_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new iopfl_config{iopfl::app::load_config(path)};
  });
}

iopfl_status iopfl_config_parse(const char* json_text, iopfl_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
      iopfl::fail(iopfl::ErrorKind::kConfig, std::string("invalid JSON: ") + e.what());
    }
    *out = new iopfl_config{iopfl::app::parse_config(j)};
  });
}

void iopfl_config_free(iopfl_config* cfg) { delete cfg; }

iopfl_status iopfl_config_set_seed(iopfl_config* cfg, uint64_t master_seed) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->value.seeds.master = master_seed;
  });
}

iopfl_status iopfl_config_set_seed_count(iopfl_config* cfg, size_t count) {
  return guarded([&] {
    need(cfg, "cfg");
    if (count == 0) iopfl::fail(iopfl::ErrorKind::kConfig, "seed count must be at least 1");
    cfg->value.seeds.count = count;
  });
}

iopfl_status iopfl_config_set_output_dir(iopfl_config* cfg, const char* dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(dir, "dir");
    if (!*dir) iopfl::fail(iopfl::ErrorKind::kConfig, "output directory must not be empty");
    cfg->value.output_dir = dir;
  });
}

iopfl_status iopfl_config_set_threads(iopfl_config* cfg, size_t threads) {
  return guarded([&] {
    need(cfg, "cfg");
    if (threads < 1 || threads > 1024) iopfl::fail(iopfl::ErrorKind::kConfig, "threads must be in [1, 1024]");
    cfg->value.threads = threads;
  });
}

iopfl_status iopfl_config_apply_env(iopfl_config* cfg) {
  return guarded([&] {
    need(cfg, "cfg");
    iopfl::app::apply_env_overrides(cfg->value);
  });
}

iopfl_status iopfl_config_output_dir(const iopfl_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return set_error(IOPFL_ERR_CONFIG, "cfg must not be NULL");
  return copy_string(cfg->value.output_dir.string(), buf, cap, needed);
}

iopfl_status iopfl_config_to_json(const iopfl_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (!cfg) return set_error(IOPFL_ERR_CONFIG, "cfg must not be NULL");
  std::string text;
  const iopfl_status s = guarded([&] { text = iopfl::app::to_json(cfg->value).dump(2); });
  if (s != IOPFL_OK) return s;
  return copy_string(text, buf, cap, needed);
}

iopfl_status iopfl_train(const iopfl_config* cfg, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    iopfl::app::cmd_train(cfg->value, out_dir);
  });
}

iopfl_status iopfl_adapt(const iopfl_config* cfg, const char* checkpoint_dir,
                         const char* outside_client, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(checkpoint_dir, "checkpoint_dir");
    need(out_dir, "out_dir");
    iopfl::app::ExperimentConfig c = cfg->value;
    if (outside_client) c.data.outside_client = outside_client;
    namespace fs = std::filesystem;
    if (fs::exists(out_dir) && fs::exists(checkpoint_dir) && fs::equivalent(out_dir, checkpoint_dir)) {
      iopfl::fail(iopfl::ErrorKind::kConfig, "adapt output directory must differ from the checkpoint directory");
    }
    iopfl::app::cmd_adapt(c, checkpoint_dir, out_dir);
  });
}

iopfl_status iopfl_ablate(const iopfl_config* cfg, const char* sweep, const double* values,
                          size_t count, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(sweep, "sweep");
    need(out_dir, "out_dir");
    if (count > 0) need(values, "values");
    std::vector<double> grid(values, values + count);
    iopfl::app::cmd_ablate(cfg->value, iopfl::app::sweep_from_string(sweep), std::move(grid), out_dir);
  });
}

iopfl_status iopfl_leave_one_out(const iopfl_config* cfg, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    iopfl::app::cmd_leave_one_out(cfg->value, out_dir);
  });
}

iopfl_status iopfl_report(const char* results_dir, const char* out_dir) {
  return guarded([&] {
    need(results_dir, "results_dir");
    need(out_dir, "out_dir");
    iopfl::app::cmd_report(results_dir, out_dir);
  });
}

iopfl_status iopfl_model_build(size_t in_channels, size_t classes, size_t base_width, uint64_t seed,
                               iopfl_model** out) {
  return guarded([&] {
    need(out, "out");
    if (in_channels == 0 || classes < 2 || base_width == 0) {
      iopfl::fail(iopfl::ErrorKind::kConfig, "model_build: need in_channels >= 1, classes >= 2, base_width >= 1");
    }
    *out = new iopfl_model{iopfl::nn::build_tiny_unet(in_channels, classes, base_width, seed)};
  });
}

iopfl_status iopfl_model_load(const char* prefix, iopfl_model** out) {
  return guarded([&] {
    need(prefix, "prefix");
    need(out, "out");
    *out = new iopfl_model{iopfl::nn::load_checkpoint(prefix)};
  });
}

iopfl_status iopfl_model_save(const iopfl_model* model, const char* prefix) {
  return guarded([&] {
    need(model, "model");
    need(prefix, "prefix");
    iopfl::nn::save_checkpoint(model->value, prefix);
  });
}

void iopfl_model_free(iopfl_model* model) { delete model; }

iopfl_status iopfl_model_param_count(const iopfl_model* model, size_t* out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->value.parameter_count();
  });
}

iopfl_status iopfl_model_classes(const iopfl_model* model, size_t* out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = model->value.out_channels();
  });
}

iopfl_status iopfl_model_forward(const iopfl_model* model, const double* input, size_t n, size_t c,
                                 size_t h, size_t w, double* logits, size_t logits_len) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(logits, "logits");
    const size_t classes = model->value.out_channels();
    if (logits_len != n * classes * h * w) {
      iopfl::fail(iopfl::ErrorKind::kShape, "model_forward: logits buffer holds " + std::to_string(logits_len) +
                                                " values, need " + std::to_string(n * classes * h * w));
    }
    iopfl::nn::Tensor x({n, c, h, w}, std::vector<double>(input, input + n * c * h * w));
    const iopfl::nn::Tensor y = iopfl::nn::infer(model->value, x, iopfl::nn::Mode::kEval);
    std::memcpy(logits, y.data(), y.size() * sizeof(double));
  });
}

iopfl_status iopfl_dice(const int32_t* pred, const int32_t* gt, size_t len, int32_t cls, double* out) {
  return guarded([&] {
    need(out, "out");
    if (len > 0) {
      need(pred, "pred");
      need(gt, "gt");
    }
    *out = iopfl::eval::dice({pred, len}, {gt, len}, cls);
  });
}

}  // extern "C"
