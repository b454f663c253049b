#ifndef BRIDGEFUSE_REPORT_HPP_
#define BRIDGEFUSE_REPORT_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bridgefuse/serialize.hpp"

namespace bridgefuse {

/// One configuration row of the results table.
struct ReportRow {
  std::string label;
  bool self_attention = false;
  bool cross_attention = false;
  bool bridge_tokens = false;
  bool rmm = false;
  bool categorical = false;
  bool dimensional = false;
  int n_seeds = 0;
  MetricSummary uar;
  MetricSummary war;
  std::optional<MetricSummary> ccc_valence;
  std::optional<MetricSummary> ccc_arousal;
};

/// Row built from a run's report.json.
ReportRow RowFromExperimentJson(const Json& report);
ReportRow RowFromExperiment(const ExperimentResult& result);

Json SummaryToJson(std::span<const ReportRow> rows);
std::vector<ReportRow> SummaryFromJson(const Json& summary);

/// "74.68 ± 0.16%" (percent, two decimals); the ± part is dropped for one seed.
std::string FormatPercent(const MetricSummary& m, int n_seeds);
/// ".748 ± .050" (three decimals, no leading zero).
std::string FormatCcc(const MetricSummary& m, int n_seeds);

/// Columns: Model | S/A | CR/A | Q | RMM | Disc | Con | UAR | WAR | V | A.
/// Metrics of a task that was not trained render as "-".
std::string RenderTable(std::span<const ReportRow> rows);

}  // namespace bridgefuse

#endif  // BRIDGEFUSE_REPORT_HPP_
