#include "app/config.hpp"

#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdlib>
#include <set>

#include "nn/error.hpp"
#include "util/format.hpp"

namespace iopfl::app {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail(ErrorKind::kConfig, "config field '" + path + "': " + what);
}

/// Reads one JSON object, remembering which keys were consumed so the rest
/// can be rejected as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, field(key));
  }
  template <std::unsigned_integral T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) out = static_cast<T>(as_size(*v, field(key)));
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) bad(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) out = as_string(*v, field(key));
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) bad(field(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_double((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) bad(field(key), "expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_string((*v)[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void get(const std::string& key, std::array<double, 2>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2) bad(field(key), "expected [low, high]");
      out = {as_double((*v)[0], field(key) + "[0]"), as_double((*v)[1], field(key) + "[1]")};
    }
  }

  /// Calls fn(Reader&) on a nested object when present.
  template <class Fn>
  void child(const std::string& key, Fn&& fn) {
    if (const json* v = find(key)) {
      Reader r(*v, field(key));
      fn(r);
      r.finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) bad(field(it.key()), "unknown key");
    }
  }

  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) bad(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(path, "must be finite");
    return d;
  }
  static std::size_t as_size(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      bad(path, "expected a non-negative integer");
    return v.get<std::size_t>();
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) bad(path, "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string_view mode_name(nn::Mode m) {
  switch (m) {
    case nn::Mode::kBatchStats: return "batch-stats";
    case nn::Mode::kEval: return "running-stats";
    case nn::Mode::kTrain: break;
  }
  return "train";
}

nn::Mode mode_from(const std::string& s, const std::string& path) {
  if (s == "batch-stats") return nn::Mode::kBatchStats;
  if (s == "running-stats") return nn::Mode::kEval;
  bad(path, "expected \"batch-stats\" or \"running-stats\", got \"" + s + "\"");
}

template <class T, class Parse>
T enum_from(const std::string& s, const std::string& path, Parse parse) {
  try {
    return parse(s);
  } catch (const Error& e) {
    bad(path, e.what());
  }
}

void read_shift(Reader& r, data::ClientShift& s) {
  r.get("name", s.name);
  r.get("intensity_scale", s.intensity_scale);
  r.get("intensity_offset", s.intensity_offset);
  r.get("noise_sigma", s.noise_sigma);
  r.get("texture_freq", s.texture_freq);
  r.get("fg_radius_range", s.fg_radius_range);
  r.get("eccentricity_range", s.eccentricity_range);
}

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '_' || ch == '-' || ch == '.';
    if (!ok) return false;
  }
  return s != "." && s != "..";
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) bad(path, what);
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Reader root(j, "");
  root.child("seed", [&](Reader& r) {
    r.get("master", c.seeds.master);
    r.get("count", c.seeds.count);
  });
  root.child("data", [&](Reader& r) {
    r.get("classes", c.data.classes);
    r.get("image_size", c.data.image_size);
    r.get("samples_per_client", c.data.samples_per_client);
    r.child("split", [&](Reader& s) {
      s.get("train", c.data.split.train);
      s.get("val", c.data.split.val);
      s.get("test", c.data.split.test);
    });
    r.get("outside_client", c.data.outside_client);
    r.get("inside_clients", c.data.inside_clients);
    if (const json* arr = r.find("clients")) {
      if (!arr->is_array()) bad(r.field("clients"), "expected an array of client objects");
      c.data.clients.clear();
      for (std::size_t i = 0; i < arr->size(); ++i) {
        Reader cr((*arr)[i], r.field("clients") + "[" + std::to_string(i) + "]");
        data::ClientShift s;
        read_shift(cr, s);
        cr.finish();
        c.data.clients.push_back(s);
      }
    }
  });
  root.child("federation", [&](Reader& r) {
    auto& f = c.federation;
    r.get("rounds", f.rounds);
    std::string opt(nn::to_string(f.local_optimizer.kind));
    r.get("optimizer", opt);
    f.local_optimizer.kind = enum_from<nn::OptimizerKind>(opt, r.field("optimizer"), nn::optimizer_kind_from_string);
    r.get("lr_local", f.local_optimizer.learning_rate);
    r.get("lr_global", f.lr_global);
    r.get("local_epochs", f.local_epochs);
    r.get("batch", f.batch);
    r.get("augment", f.augment);
    r.get("base_width", f.base_width);
    r.get("single_site_baseline", c.single_site_baseline);
  });
  root.child("personalization", [&](Reader& r) {
    auto& p = c.federation.personalization;
    r.get("enabled", p.enabled);
    r.get("tau", p.tau);
    std::string variant(fed::to_string(p.variant)), stats(fed::to_string(p.bn_stats));
    r.get("variant", variant);
    r.get("bn_stats", stats);
    p.variant = enum_from<fed::PersonalizationVariant>(variant, r.field("variant"),
                                                       fed::personalization_variant_from_string);
    p.bn_stats = enum_from<fed::BnStatsSource>(stats, r.field("bn_stats"), fed::bn_stats_source_from_string);
  });
  root.child("routing", [&](Reader& r) {
    auto& a = c.routing.adapt;
    r.get("beta", a.loss.beta);
    r.get("d", a.loss.radius);
    r.get("sigma", a.loss.sigma);
    r.get("epochs", a.epochs);
    r.get("lr", a.optimizer.learning_rate);
    r.get("batch", a.batch);
    std::string opt(nn::to_string(a.optimizer.kind));
    r.get("optimizer", opt);
    a.optimizer.kind = enum_from<nn::OptimizerKind>(opt, r.field("optimizer"), nn::optimizer_kind_from_string);
    std::string bn(mode_name(c.routing.baseline_bn));
    r.get("baseline_bn", bn);
    c.routing.baseline_bn = mode_from(bn, r.field("baseline_bn"));
  });
  root.child("ablation", [&](Reader& r) {
    r.get("tau", c.ablation.tau);
    r.get("local_epochs", c.ablation.local_epochs);
    r.get("members", c.ablation.members);
    r.get("d", c.ablation.d);
    r.get("beta", c.ablation.beta);
  });
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;
  root.get("threads", c.threads);
  root.finish();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, "config " + path.string() + ": invalid JSON: " + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  using oj = nlohmann::ordered_json;
  oj clients = oj::array();
  for (const auto& s : c.data.clients) {
    clients.push_back({{"name", s.name},
                       {"intensity_scale", s.intensity_scale},
                       {"intensity_offset", s.intensity_offset},
                       {"noise_sigma", s.noise_sigma},
                       {"texture_freq", s.texture_freq},
                       {"fg_radius_range", s.fg_radius_range},
                       {"eccentricity_range", s.eccentricity_range}});
  }
  const auto& f = c.federation;
  const auto& p = f.personalization;
  const auto& a = c.routing.adapt;
  oj j;
  j["seed"] = {{"master", c.seeds.master}, {"count", c.seeds.count}};
  j["data"] = {{"classes", c.data.classes},
               {"image_size", c.data.image_size},
               {"samples_per_client", c.data.samples_per_client},
               {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}},
               {"outside_client", c.data.outside_client},
               {"inside_clients", c.data.inside_clients},
               {"clients", clients}};
  j["federation"] = {{"rounds", f.rounds},
                     {"optimizer", nn::to_string(f.local_optimizer.kind)},
                     {"lr_local", f.local_optimizer.learning_rate},
                     {"lr_global", f.lr_global},
                     {"local_epochs", f.local_epochs},
                     {"batch", f.batch},
                     {"augment", f.augment},
                     {"base_width", f.base_width},
                     {"single_site_baseline", c.single_site_baseline}};
  j["personalization"] = {{"enabled", p.enabled},
                          {"tau", p.tau},
                          {"variant", fed::to_string(p.variant)},
                          {"bn_stats", fed::to_string(p.bn_stats)}};
  j["routing"] = {{"beta", a.loss.beta},
                  {"d", a.loss.radius},
                  {"sigma", a.loss.sigma},
                  {"epochs", a.epochs},
                  {"lr", a.optimizer.learning_rate},
                  {"batch", a.batch},
                  {"optimizer", nn::to_string(a.optimizer.kind)},
                  {"baseline_bn", mode_name(c.routing.baseline_bn)}};
  j["ablation"] = {{"tau", c.ablation.tau},
                   {"local_epochs", c.ablation.local_epochs},
                   {"members", c.ablation.members},
                   {"d", c.ablation.d},
                   {"beta", c.ablation.beta}};
  j["output_dir"] = c.output_dir.string();
  j["threads"] = c.threads;
  return j;
}

void validate(const ExperimentConfig& c) {
  require(c.seeds.count >= 1, "seed.count", "must be at least 1");

  const auto& d = c.data;
  require(d.classes == 2 || d.classes == 3, "data.classes", "must be 2 or 3");
  require(d.image_size >= 8 && d.image_size % 4 == 0 && d.image_size <= 512, "data.image_size",
          "must be a multiple of 4 in [8, 512]");
  require(d.samples_per_client >= 2 && d.samples_per_client <= 100000, "data.samples_per_client",
          "must be in [2, 100000]");
  for (auto [name, v] : {std::pair{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}) {
    require(v >= 0.0 && v <= 1.0, std::string("data.split.") + name, "must be in [0, 1]");
  }
  require(d.split.train > 0.0, "data.split.train", "must be positive");
  require(std::abs(d.split.train + d.split.val + d.split.test - 1.0) < 1e-9, "data.split",
          "fractions must sum to 1");
  require(d.clients.size() >= 2, "data.clients", "need at least one inside and one outside client");
  std::set<std::string> names;
  for (std::size_t i = 0; i < d.clients.size(); ++i) {
    const auto& s = d.clients[i];
    const std::string path = "data.clients[" + std::to_string(i) + "]";
    require(safe_name(s.name), path + ".name", "must be non-empty and use only [A-Za-z0-9_.-]");
    require(names.insert(s.name).second, path + ".name", "duplicate client name '" + s.name + "'");
    data::ClientShift checked = s;
    checked.n_samples = d.samples_per_client;
    try {
      checked.validate(d.image_size);
    } catch (const Error& e) {
      bad(path, e.what());
    }
  }
  require(names.count(d.outside_client), "data.outside_client",
          "'" + d.outside_client + "' is not a configured client");
  std::set<std::string> inside;
  for (const auto& n : d.inside_clients) {
    require(names.count(n), "data.inside_clients", "'" + n + "' is not a configured client");
    require(n != d.outside_client, "data.inside_clients", "'" + n + "' is the outside client");
    require(inside.insert(n).second, "data.inside_clients", "duplicate client '" + n + "'");
  }

  const auto& f = c.federation;
  require(f.rounds <= 100000, "federation.rounds", "must be at most 100000");
  require(f.local_optimizer.learning_rate > 0.0, "federation.lr_local", "must be positive");
  require(f.lr_global >= 0.0, "federation.lr_global", "must be non-negative");
  require(f.local_epochs >= 1, "federation.local_epochs", "must be at least 1");
  require(f.batch >= 1, "federation.batch", "must be at least 1");
  require(f.base_width >= 1 && f.base_width <= 256, "federation.base_width", "must be in [1, 256]");
  require(f.personalization.tau > 0.0 && f.personalization.tau <= 1.0, "personalization.tau",
          "must be in (0, 1]");

  const auto& a = c.routing.adapt;
  require(a.loss.beta >= 0.0, "routing.beta", "must be non-negative");
  require(a.loss.radius >= 1, "routing.d", "must be at least 1");
  require(a.loss.sigma >= 0.0, "routing.sigma", "must be non-negative");
  require(a.optimizer.learning_rate > 0.0, "routing.lr", "must be positive");
  require(a.batch >= 1, "routing.batch", "must be at least 1");
  require(c.routing.baseline_bn != nn::Mode::kTrain, "routing.baseline_bn", "train mode is not allowed");

  for (double v : c.ablation.tau) require(v > 0.0 && v <= 1.0, "ablation.tau", "values must be in (0, 1]");
  for (double v : c.ablation.local_epochs)
    require(v >= 1.0 && v == std::floor(v), "ablation.local_epochs", "values must be positive integers");
  for (double v : c.ablation.members)
    require(v >= 1.0 && v == std::floor(v), "ablation.members", "values must be positive integers");
  for (double v : c.ablation.d) require(v >= 1.0 && v == std::floor(v), "ablation.d", "values must be positive integers");
  for (double v : c.ablation.beta) require(v >= 0.0, "ablation.beta", "values must be non-negative");

  require(!c.output_dir.empty(), "output_dir", "must not be empty");
  require(c.threads >= 1 && c.threads <= 1024, "threads", "must be in [1, 1024]");
}

void apply_env_overrides(ExperimentConfig& c) {
  if (const char* out = std::getenv("IOPFL_OUT"); out && *out) c.output_dir = out;
  if (const char* t = std::getenv("IOPFL_THREADS"); t && *t) {
    std::size_t v = 0;
    const std::string s(t);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1 || v > 1024) {
      fail(ErrorKind::kConfig, "environment variable IOPFL_THREADS: expected an integer in [1, 1024], got '" + s + "'");
    }
    c.threads = v;
  }
}

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& c) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < c.seeds.count; ++i) out.push_back(c.seeds.master + i);
  return out;
}

std::size_t outside_index(const ExperimentConfig& c) {
  for (std::size_t i = 0; i < c.data.clients.size(); ++i)
    if (c.data.clients[i].name == c.data.outside_client) return i;
  fail(ErrorKind::kConfig, "outside client '" + c.data.outside_client + "' is not configured");
}

std::vector<std::size_t> inside_indices(const ExperimentConfig& c) {
  const std::size_t out = outside_index(c);
  std::vector<std::size_t> idx;
  if (c.data.inside_clients.empty()) {
    for (std::size_t i = 0; i < c.data.clients.size(); ++i)
      if (i != out) idx.push_back(i);
    return idx;
  }
  for (const auto& n : c.data.inside_clients) {
    for (std::size_t i = 0; i < c.data.clients.size(); ++i)
      if (c.data.clients[i].name == n) idx.push_back(i);
  }
  return idx;
}

}  // namespace iopfl::app
