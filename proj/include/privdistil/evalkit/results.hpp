#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace privdistil::evalkit {

/// One measured value of one run.
struct ResultRow {
  std::string run_id;
  std::string method;
  std::string loss;
  std::string privileged;  // privileged source, or "none"
  uint64_t seed = 0;
  std::string metric;  // e.g. "probe_acc", "ood_drop", "class_acc/tumour"
  double value = 0.0;
  bool operator==(const ResultRow&) const = default;
};

inline constexpr const char* kResultsHeader = "run_id,method,loss,privileged,seed,metric,value";

/// Values are written with 17 significant digits so that re-reading is exact.
void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

/// Metrics where a smaller value is better (names containing "drop").
bool lower_is_better(const std::string& metric);

/// Markdown tables: one row per (method, loss, privileged) group in first-seen order,
/// one column per metric, cells "mean (std)" over seeds, the best cell of each column in
/// bold (first occurrence wins ties). Metrics named "class_acc/<class>" go to a separate
/// per-class table. Throws ArgumentError for an empty row list.
std::string markdown_summary(const std::vector<ResultRow>& rows);

}  // namespace privdistil::evalkit
