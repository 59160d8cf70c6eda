#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>

#include "app/commands.hpp"
#include "eval/results.hpp"
#include "nn/error.hpp"
#include "util/format.hpp"

namespace iopfl::app {

namespace fs = std::filesystem;

namespace {

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
  std::size_t n = 0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

std::string cell(const MeanStd& m) {
  return util::fixed(m.mean, 4) + " (" + util::fixed(m.stddev, 4) + ")";
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  const std::string text = util::read_text(path);
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t s = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(s, i - s));
        s = i + 1;
      }
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) fail(ErrorKind::kIo, "report: empty file " + path.string());
  return rows;
}

double to_double(const std::string& s, const fs::path& path) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    fail(ErrorKind::kIo, "report: bad number '" + s + "' in " + path.string());
  }
  return v;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const fs::path& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) fail(ErrorKind::kIo, "report: column '" + name + "' missing in " + path.string());
  return static_cast<std::size_t>(it - header.begin());
}

std::string label_of(const fs::path& rel) {
  std::string s = rel.generic_string();
  if (s.empty() || s == ".") return "run";
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

/// Sorted recursive listing of files with the given name below `dir`.
std::vector<fs::path> find_files(const fs::path& dir, const std::string& name, const fs::path& skip) {
  std::vector<fs::path> out;
  for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory() && !skip.empty() && fs::exists(skip) && fs::equivalent(it->path(), skip)) {
      it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file() && it->path().filename() == name) out.push_back(it->path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Directories holding a metrics.csv, without descending into them.
std::vector<fs::path> find_runs(const fs::path& dir, const fs::path& skip) {
  std::vector<fs::path> out;
  if (fs::exists(dir / "metrics.csv")) return {dir};
  std::vector<fs::path> children;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_directory()) continue;
    if (!skip.empty() && fs::exists(skip) && fs::equivalent(e.path(), skip)) continue;
    children.push_back(e.path());
  }
  std::sort(children.begin(), children.end());
  for (const auto& c : children) {
    const auto sub = find_runs(c, skip);
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

template <class T>
std::vector<T> in_order(std::span<const eval::MetricRow> rows, T eval::MetricRow::*field) {
  std::vector<T> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.*field) == out.end()) out.push_back(r.*field);
  return out;
}

std::string tables_for(const std::string& label, const std::vector<eval::MetricRow>& rows) {
  std::string md = "## " + label + "\n\n";
  struct Group {
    std::string config, phase, region;
    bool operator==(const Group&) const = default;
  };
  std::vector<Group> groups;
  for (const auto& r : rows) {
    const Group g{r.config, r.phase, r.region};
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  for (const auto& g : groups) {
    std::vector<eval::MetricRow> sel;
    for (const auto& r : rows)
      if (r.config == g.config && r.phase == g.phase && r.region == g.region) sel.push_back(r);
    const auto clients = in_order<std::string>(sel, &eval::MetricRow::client);
    const auto methods = in_order<std::string>(sel, &eval::MetricRow::method);
    const auto seeds = in_order<std::uint64_t>(sel, &eval::MetricRow::seed);

    md += "### " + g.config + " / " + g.phase + " / " + g.region + "\n\n| method |";
    for (const auto& c : clients) md += ' ' + c + " |";
    md += " avg |\n|---|";
    for (std::size_t i = 0; i <= clients.size(); ++i) md += "---|";
    md += '\n';
    for (const auto& m : methods) {
      md += "| " + m + " |";
      std::map<std::uint64_t, std::vector<double>> by_seed;
      for (const auto& c : clients) {
        std::vector<double> v;
        for (const auto& r : sel) {
          if (r.method == m && r.client == c) {
            v.push_back(r.dice);
            by_seed[r.seed].push_back(r.dice);
          }
        }
        md += ' ' + (v.empty() ? std::string("-") : cell(mean_std(v))) + " |";
      }
      std::vector<double> avg;
      for (std::uint64_t s : seeds) {
        if (by_seed.count(s)) avg.push_back(mean_std(by_seed[s]).mean);
      }
      md += ' ' + cell(mean_std(avg)) + " |\n";
    }
    md += "\nmean (sample std) over " + std::to_string(seeds.size()) + " seed(s)\n\n";
  }
  return md;
}

/// round -> per-seed means over clients, from seed_<s>/trace.csv files.
std::string dice_curve(const std::vector<fs::path>& traces) {
  std::map<std::size_t, std::vector<double>> g, p, loss;
  for (const auto& path : traces) {
    const auto rows = read_csv(path);
    const std::size_t cr = column(rows[0], "round", path), cg = column(rows[0], "val_dice", path),
                      cp = column(rows[0], "val_dice_personalized", path),
                      cl = column(rows[0], "train_loss", path);
    std::map<std::size_t, std::array<double, 4>> acc;  // sums and count
    for (std::size_t i = 1; i < rows.size(); ++i) {
      auto& a = acc[static_cast<std::size_t>(to_double(rows[i].at(cr), path))];
      a[0] += to_double(rows[i].at(cg), path);
      a[1] += to_double(rows[i].at(cp), path);
      a[2] += to_double(rows[i].at(cl), path);
      a[3] += 1.0;
    }
    for (const auto& [round, a] : acc) {
      g[round].push_back(a[0] / a[3]);
      p[round].push_back(a[1] / a[3]);
      loss[round].push_back(a[2] / a[3]);
    }
  }
  std::string csv =
      "round,val_dice_global_mean,val_dice_global_std,val_dice_personalized_mean,"
      "val_dice_personalized_std,train_loss_mean,train_loss_std,seeds\n";
  for (const auto& [round, v] : g) {
    const auto a = mean_std(v), b = mean_std(p[round]), c = mean_std(loss[round]);
    csv += std::to_string(round) + ',' + util::num(a.mean) + ',' + util::num(a.stddev) + ',' +
           util::num(b.mean) + ',' + util::num(b.stddev) + ',' + util::num(c.mean) + ',' +
           util::num(c.stddev) + ',' + std::to_string(a.n) + '\n';
  }
  return csv;
}

std::string loss_curve(const std::vector<fs::path>& losses) {
  std::map<std::size_t, std::vector<double>> by_epoch;
  for (const auto& path : losses) {
    const auto rows = read_csv(path);
    const std::size_t ce = column(rows[0], "epoch", path), cl = column(rows[0], "mean_loss", path);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      by_epoch[static_cast<std::size_t>(to_double(rows[i].at(ce), path))].push_back(
          to_double(rows[i].at(cl), path));
    }
  }
  std::string csv = "epoch,loss_mean,loss_std,seeds\n";
  for (const auto& [e, v] : by_epoch) {
    const auto m = mean_std(v);
    csv += std::to_string(e) + ',' + util::num(m.mean) + ',' + util::num(m.stddev) + ',' +
           std::to_string(m.n) + '\n';
  }
  return csv;
}

std::string sweep_curve(const fs::path& path) {
  const auto rows = read_csv(path);
  const auto& header = rows[0];
  const std::size_t cp = column(header, "parameter", path), cv = column(header, "value", path);
  std::vector<std::string> values;
  std::map<std::pair<std::string, std::string>, std::vector<double>> acc;
  std::string parameter;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    parameter = rows[i].at(cp);
    const std::string& v = rows[i].at(cv);
    if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
    for (std::size_t c = 3; c < header.size(); ++c) {
      if (c < rows[i].size() && !rows[i][c].empty()) acc[{v, header[c]}].push_back(to_double(rows[i][c], path));
    }
  }
  std::string csv = "parameter,value,method,mean,std,seeds\n";
  for (const auto& v : values) {
    for (std::size_t c = 3; c < header.size(); ++c) {
      const auto it = acc.find({v, header[c]});
      if (it == acc.end()) continue;
      const auto m = mean_std(it->second);
      csv += parameter + ',' + v + ',' + header[c] + ',' + util::num(m.mean) + ',' +
             util::num(m.stddev) + ',' + std::to_string(m.n) + '\n';
    }
  }
  return csv;
}

/// Groups files by the directory above their seed_<s> directory.
std::map<fs::path, std::vector<fs::path>> by_run(const std::vector<fs::path>& files) {
  std::map<fs::path, std::vector<fs::path>> out;
  for (const auto& f : files) {
    if (f.parent_path().filename().string().rfind("seed_", 0) != 0) continue;
    out[f.parent_path().parent_path()].push_back(f);
  }
  return out;
}

}  // namespace

void cmd_report(const fs::path& results, const fs::path& out) {
  if (!fs::is_directory(results)) fail(ErrorKind::kIo, "report: " + results.string() + " is not a directory");
  const fs::path skip = out;
  const auto runs = find_runs(results, skip);
  if (runs.empty()) fail(ErrorKind::kIo, "report: no metrics.csv found under " + results.string());

  std::string md = "# Results\n\n";
  std::vector<std::pair<std::string, std::string>> curves;  // file name, content
  for (const auto& run : runs) {
    const fs::path rel = fs::relative(run, results);
    md += tables_for(rel.empty() || rel == "." ? fs::canonical(results).filename().string()
                                                : rel.generic_string(),
                     eval::read_metrics_csv(run / "metrics.csv"));
    for (const auto& [dir, files] : by_run(find_files(run, "trace.csv", skip))) {
      curves.emplace_back(label_of(fs::relative(dir, results)) + "_dice.csv", dice_curve(files));
    }
    for (const auto& [dir, files] : by_run(find_files(run, "loss.csv", skip))) {
      curves.emplace_back(label_of(fs::relative(dir, results)) + "_adapt_loss.csv", loss_curve(files));
    }
    if (fs::exists(run / "sweep.csv")) {
      curves.emplace_back(label_of(rel) + "_sweep.csv", sweep_curve(run / "sweep.csv"));
    }
  }
  util::write_text(out / "tables.md", md);
  for (const auto& [name, content] : curves) util::write_text(out / "curves" / name, content);
}

}  // namespace iopfl::app
