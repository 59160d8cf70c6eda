#include "eval/results.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <tuple>

#include <json.hpp>

#include "nn/error.hpp"
#include "util/format.hpp"

namespace iopfl::eval {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, std::size_t line_no) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    fail(ErrorKind::kIo, "metrics CSV line " + std::to_string(line_no) + ": bad number '" +
                             std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string metrics_csv(std::span<const MetricRow> rows) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.config + ',' + std::to_string(r.seed) + ',' + r.phase + ',' + r.client + ',' +
           r.method + ',' + r.region + ',' + util::num(r.dice) + '\n';
  }
  return out;
}

std::vector<MetricRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricRow> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line_no == 1) {
      if (line != kMetricsHeader) fail(ErrorKind::kIo, "metrics CSV: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) {
      fail(ErrorKind::kIo, "metrics CSV line " + std::to_string(line_no) + ": expected 7 fields");
    }
    rows.push_back({std::string(f[0]), parse_number<std::uint64_t>(f[1], line_no),
                    std::string(f[2]), std::string(f[3]), std::string(f[4]), std::string(f[5]),
                    parse_number<double>(f[6], line_no)});
  }
  if (line_no == 0) fail(ErrorKind::kIo, "metrics CSV: empty file");
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  util::write_text(path, metrics_csv(rows));
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  return parse_metrics_csv(util::read_text(path));
}

std::vector<MetricRow> collapse_clients(std::span<const MetricRow> rows) {
  using Key = std::tuple<std::string, std::uint64_t, std::string, std::string>;
  std::map<Key, std::size_t> slot;
  std::vector<MetricRow> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    const Key key{r.config, r.seed, r.phase, r.method};
    auto [it, fresh] = slot.try_emplace(key, out.size());
    if (fresh) {
      out.push_back({r.config, r.seed, r.phase, "mean", r.method, "mean", 0.0});
      counts.push_back(0);
    }
    out[it->second].dice += r.dice;
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].dice /= static_cast<double>(counts[i]);
  return out;
}

std::vector<SummaryCell> summarize(std::span<const MetricRow> rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  std::map<Key, std::size_t> slot;
  std::vector<SummaryCell> out;
  for (const auto& r : rows) {
    const Key key{r.config, r.phase, r.client, r.method, r.region};
    auto [it, fresh] = slot.try_emplace(key, out.size());
    if (fresh) out.push_back({r.config, r.phase, r.client, r.method, r.region, {}, {}, 0.0, 0.0});
    out[it->second].seeds.push_back(r.seed);
    out[it->second].values.push_back(r.dice);
  }
  for (auto& c : out) {
    const double n = static_cast<double>(c.values.size());
    double sum = 0.0;
    for (double v : c.values) sum += v;
    c.mean = sum / n;
    if (c.values.size() > 1) {
      double ss = 0.0;
      for (double v : c.values) ss += (v - c.mean) * (v - c.mean);
      c.stddev = std::sqrt(ss / (n - 1.0));
    }
  }
  return out;
}

std::string summary_json(std::span<const SummaryCell> cells) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    arr.push_back({{"config", c.config},
                   {"phase", c.phase},
                   {"client", c.client},
                   {"method", c.method},
                   {"region", c.region},
                   {"seeds", c.seeds},
                   {"values", c.values},
                   {"mean", c.mean},
                   {"std", c.stddev}});
  }
  nlohmann::ordered_json doc;
  doc["cells"] = std::move(arr);
  return doc.dump(2) + '\n';
}

}  // namespace iopfl::eval
