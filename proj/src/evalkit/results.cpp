#include "privdistil/evalkit/results.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <fstream>
#include <map>
#include <sstream>

#include "privdistil/common/error.hpp"

namespace privdistil::evalkit {

namespace {

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) throw ArgumentError("result field contains a comma or quote: " + s);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
  bool present = false;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  s.present = true;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string table(const std::vector<ResultRow>& rows, const std::vector<std::string>& metrics,
                  const std::function<std::string(const std::string&)>& header_of) {
  std::vector<std::string> groups;
  std::map<std::string, std::vector<std::string>> group_cols;
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;
  for (const auto& r : rows) {
    const std::string g = r.method + "\x1f" + r.loss + "\x1f" + r.privileged;
    if (!group_cols.count(g)) {
      groups.push_back(g);
      group_cols[g] = {r.method, r.loss, r.privileged};
    }
    values[{g, r.metric}].push_back(r.value);
  }

  std::vector<std::vector<Stats>> cells(groups.size(), std::vector<Stats>(metrics.size()));
  std::vector<int64_t> best(metrics.size(), -1);
  for (size_t m = 0; m < metrics.size(); ++m) {
    for (size_t g = 0; g < groups.size(); ++g) {
      auto it = values.find({groups[g], metrics[m]});
      if (it == values.end()) continue;
      cells[g][m] = stats_of(it->second);
      const auto& c = cells[g][m];
      if (best[m] < 0) {
        best[m] = static_cast<int64_t>(g);
      } else {
        const double cur = cells[best[m]][m].mean;
        if (lower_is_better(metrics[m]) ? c.mean < cur : c.mean > cur) best[m] = static_cast<int64_t>(g);
      }
    }
  }

  std::ostringstream out;
  out << "| method | loss | privileged |";
  for (const auto& m : metrics) out << ' ' << header_of(m) << " |";
  out << "\n|---|---|---|";
  for (size_t m = 0; m < metrics.size(); ++m) out << "---|";
  out << '\n';
  for (size_t g = 0; g < groups.size(); ++g) {
    const auto& cols = group_cols[groups[g]];
    out << "| " << cols[0] << " | " << cols[1] << " | " << cols[2] << " |";
    for (size_t m = 0; m < metrics.size(); ++m) {
      const auto& c = cells[g][m];
      if (!c.present) {
        out << " - |";
        continue;
      }
      std::string cell = format_double(c.mean, "%.4f") + " (" + format_double(c.std, "%.4f") + ")";
      if (best[m] == static_cast<int64_t>(g)) cell = "**" + cell + "**";
      out << ' ' << cell << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write results " + path.string());
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    for (const auto* f : {&r.run_id, &r.method, &r.loss, &r.privileged, &r.metric}) check_field(*f);
    out << r.run_id << ',' << r.method << ',' << r.loss << ',' << r.privileged << ',' << r.seed << ',' << r.metric << ','
        << format_double(r.value, "%.17g") << '\n';
  }
  if (!out) throw DataError("cannot write results " + path.string());
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read results " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw DataError("results file has an unexpected header");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != 7) throw DataError("malformed results row: " + line);
    try {
      rows.push_back({f[0], f[1], f[2], f[3], std::stoull(f[4]), f[5], std::stod(f[6])});
    } catch (const std::exception&) {
      throw DataError("malformed results row: " + line);
    }
  }
  return rows;
}

bool lower_is_better(const std::string& metric) { return metric.find("drop") != std::string::npos; }

std::string markdown_summary(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ArgumentError("no results to summarise");
  std::vector<std::string> metrics;
  std::vector<std::string> class_metrics;
  for (const auto& r : rows) {
    auto& target = r.metric.rfind("class_acc/", 0) == 0 ? class_metrics : metrics;
    if (std::find(target.begin(), target.end(), r.metric) == target.end()) target.push_back(r.metric);
  }
  std::ostringstream out;
  out << "## Summary (mean over seeds, std in parentheses; best per column in bold)\n\n";
  if (!metrics.empty()) out << table(rows, metrics, [](const std::string& m) { return m; });
  if (!class_metrics.empty()) {
    out << "\n## Per-class probe accuracy\n\n";
    out << table(rows, class_metrics, [](const std::string& m) { return m.substr(10); });
  }
  return out.str();
}

}  // namespace privdistil::evalkit
