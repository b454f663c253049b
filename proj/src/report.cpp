#include "bridgefuse/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace bridgefuse {

namespace {

MetricSummary SummaryFrom(const Json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

std::optional<MetricSummary> OptionalSummary(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return SummaryFrom(j.at(key));
}

Json SummaryJson(const MetricSummary& m) { return {{"mean", m.mean}, {"std", m.std}}; }

std::string Fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string NoLeadingZero(double v, int decimals) {
  std::string s = Fixed(v, decimals);
  if (s.rfind("0.", 0) == 0) return s.substr(1);
  if (s.rfind("-0.", 0) == 0) return "-" + s.substr(2);
  return s;
}

std::string PadRight(const std::string& s, std::size_t width) {
  // Width is counted in code points so "±" occupies one column.
  std::size_t cols = 0;
  for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
  return s + std::string(width > cols ? width - cols : 0, ' ');
}

std::size_t Columns(const std::string& s) {
  std::size_t cols = 0;
  for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
  return cols;
}

}  // namespace

ReportRow RowFromExperimentJson(const Json& report) {
  ReportRow row;
  row.label = report.at("label").get<std::string>();
  const auto& f = report.at("flags");
  row.self_attention = f.at("self_attention").get<bool>();
  row.cross_attention = f.at("cross_attention").get<bool>();
  row.bridge_tokens = f.at("bridge_tokens").get<bool>();
  row.rmm = f.at("rmm").get<bool>();
  row.categorical = f.at("categorical").get<bool>();
  row.dimensional = f.at("dimensional").get<bool>();
  row.n_seeds = static_cast<int>(report.at("per_seed").size());
  row.war = SummaryFrom(report.at("war"));
  row.uar = SummaryFrom(report.at("uar"));
  row.ccc_valence = OptionalSummary(report, "ccc_valence");
  row.ccc_arousal = OptionalSummary(report, "ccc_arousal");
  return row;
}

ReportRow RowFromExperiment(const ExperimentResult& result) { return RowFromExperimentJson(ToJson(result)); }

Json SummaryToJson(std::span<const ReportRow> rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"label", r.label},
                   {"S/A", r.self_attention},
                   {"CR/A", r.cross_attention},
                   {"Q", r.bridge_tokens},
                   {"RMM", r.rmm},
                   {"Disc", r.categorical},
                   {"Con", r.dimensional},
                   {"n_seeds", r.n_seeds},
                   {"uar", SummaryJson(r.uar)},
                   {"war", SummaryJson(r.war)},
                   {"ccc_valence", r.ccc_valence ? SummaryJson(*r.ccc_valence) : Json(nullptr)},
                   {"ccc_arousal", r.ccc_arousal ? SummaryJson(*r.ccc_arousal) : Json(nullptr)}});
  }
  return {{"format", "bridgefuse-summary-v1"}, {"rows", out}};
}

std::vector<ReportRow> SummaryFromJson(const Json& summary) {
  if (summary.value("format", "") != "bridgefuse-summary-v1") {
    throw std::runtime_error("summary: unknown format");
  }
  std::vector<ReportRow> rows;
  for (const auto& j : summary.at("rows")) {
    ReportRow r;
    r.label = j.at("label").get<std::string>();
    r.self_attention = j.at("S/A").get<bool>();
    r.cross_attention = j.at("CR/A").get<bool>();
    r.bridge_tokens = j.at("Q").get<bool>();
    r.rmm = j.at("RMM").get<bool>();
    r.categorical = j.at("Disc").get<bool>();
    r.dimensional = j.at("Con").get<bool>();
    r.n_seeds = j.at("n_seeds").get<int>();
    r.uar = SummaryFrom(j.at("uar"));
    r.war = SummaryFrom(j.at("war"));
    r.ccc_valence = OptionalSummary(j, "ccc_valence");
    r.ccc_arousal = OptionalSummary(j, "ccc_arousal");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string FormatPercent(const MetricSummary& m, int n_seeds) {
  std::string s = Fixed(100.0 * m.mean, 2);
  if (n_seeds > 1) s += " ± " + Fixed(100.0 * m.std, 2);
  return s + "%";
}

std::string FormatCcc(const MetricSummary& m, int n_seeds) {
  std::string s = NoLeadingZero(m.mean, 3);
  if (n_seeds > 1) s += " ± " + NoLeadingZero(m.std, 3);
  return s;
}

std::string RenderTable(std::span<const ReportRow> rows) {
  const std::vector<std::string> header{"Model", "S/A", "CR/A", "Q", "RMM", "Disc", "Con", "UAR", "WAR", "V", "A"};
  std::vector<std::vector<std::string>> cells{header};
  auto mark = [](bool b) { return std::string(b ? "x" : ""); };
  for (const auto& r : rows) {
    const bool v = r.dimensional && r.ccc_valence, a = r.dimensional && r.ccc_arousal;
    cells.push_back({r.label.empty() ? "-" : r.label, mark(r.self_attention), mark(r.cross_attention),
                     mark(r.bridge_tokens), mark(r.rmm), mark(r.categorical), mark(r.dimensional),
                     r.categorical ? FormatPercent(r.uar, r.n_seeds) : "-",
                     r.categorical ? FormatPercent(r.war, r.n_seeds) : "-",
                     v ? FormatCcc(*r.ccc_valence, r.n_seeds) : "-", a ? FormatCcc(*r.ccc_arousal, r.n_seeds) : "-"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], Columns(row[c]));
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string line;
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      if (c) line += " | ";
      line += PadRight(cells[i][c], width[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
    if (i == 0) {
      std::string rule;
      for (std::size_t c = 0; c < width.size(); ++c) {
        if (c) rule += "-+-";
        rule += std::string(width[c], '-');
      }
      out << rule << '\n';
    }
  }
  return out.str();
}

}  // namespace bridgefuse
