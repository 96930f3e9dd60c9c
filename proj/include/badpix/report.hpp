#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "badpix/common.hpp"

namespace badpix {

/// One evaluation record. Fixed column order for serialization:
/// {run_id, error_rate, delta, n_frames, strategy, recall, precision,
///  nmse, psnr}. Empty optionals are explicit markers: "undefined" for
/// degenerate ratios, "inf" for a zero-MSE PSNR.
struct MetricsRow {
  std::string run_id;
  double error_rate = 0.0;
  double delta = 0.0;
  int n_frames = 1;
  std::string strategy;
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> nmse;
  std::optional<double> psnr;
  bool psnr_infinite = false;
  // extra key/value pairs; included in JSON outputs only
  std::vector<std::pair<std::string, double>> extras;
};

struct RunReport {
  std::uint64_t config_digest = 0;
  std::vector<MetricsRow> rows;
  std::vector<std::string> artifacts;
};

namespace detail {

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

inline std::string opt_json(const std::optional<double>& v,
                            bool infinite = false) {
  if (infinite) return "\"inf\"";
  if (!v) return "\"undefined\"";
  return fmt6(*v);
}

inline std::string opt_csv(const std::optional<double>& v,
                           bool infinite = false) {
  if (infinite) return "inf";
  if (!v) return "undefined";
  return fmt6(*v);
}

}  // namespace detail

inline std::string metrics_csv_header() {
  return "run_id,error_rate,delta,n_frames,strategy,recall,precision,nmse,psnr";
}

inline std::string metrics_row_csv(const MetricsRow& r) {
  return r.run_id + "," + detail::fmt6(r.error_rate) + "," +
         detail::fmt6(r.delta) + "," + std::to_string(r.n_frames) + "," +
         r.strategy + "," + detail::opt_csv(r.recall) + "," +
         detail::opt_csv(r.precision) + "," + detail::opt_csv(r.nmse) + "," +
         detail::opt_csv(r.psnr, r.psnr_infinite);
}

/// One JSON object per row, keys in the fixed column order.
inline std::string metrics_row_jsonl(const MetricsRow& r) {
  std::string s = "{";
  s += "\"run_id\":\"" + detail::json_escape(r.run_id) + "\",";
  s += "\"error_rate\":" + detail::fmt6(r.error_rate) + ",";
  s += "\"delta\":" + detail::fmt6(r.delta) + ",";
  s += "\"n_frames\":" + std::to_string(r.n_frames) + ",";
  s += "\"strategy\":\"" + detail::json_escape(r.strategy) + "\",";
  s += "\"recall\":" + detail::opt_json(r.recall) + ",";
  s += "\"precision\":" + detail::opt_json(r.precision) + ",";
  s += "\"nmse\":" + detail::opt_json(r.nmse) + ",";
  s += "\"psnr\":" + detail::opt_json(r.psnr, r.psnr_infinite);
  s += "}";
  return s;
}

namespace detail {

/// Row object with alphabetically sorted keys (report.json convention),
/// extras folded in.
inline std::string report_row_json(const MetricsRow& r) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("delta", fmt6(r.delta));
  kv.emplace_back("error_rate", fmt6(r.error_rate));
  kv.emplace_back("n_frames", std::to_string(r.n_frames));
  kv.emplace_back("nmse", opt_json(r.nmse));
  kv.emplace_back("precision", opt_json(r.precision));
  kv.emplace_back("psnr", opt_json(r.psnr, r.psnr_infinite));
  kv.emplace_back("recall", opt_json(r.recall));
  kv.emplace_back("run_id", "\"" + json_escape(r.run_id) + "\"");
  kv.emplace_back("strategy", "\"" + json_escape(r.strategy) + "\"");
  for (const auto& [k, v] : r.extras) kv.emplace_back(k, fmt6(v));
  std::sort(kv.begin(), kv.end());
  std::string s = "{";
  for (std::size_t i = 0; i < kv.size(); ++i) {
    if (i) s += ",";
    s += "\"" + kv[i].first + "\":" + kv[i].second;
  }
  return s + "}";
}

}  // namespace detail

/// Byte-stable report emission: sorted keys, %.6f floats. Every referenced
/// artifact must already exist on disk.
inline void emit_report_json(const RunReport& report, const std::string& path) {
  for (const auto& a : report.artifacts)
    if (!std::filesystem::exists(a))
      throw DataError(DataFault::io_failure,
                      "report references missing artifact: " + a);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  out << "{\n";
  out << "  \"artifacts\": [";
  for (std::size_t i = 0; i < report.artifacts.size(); ++i) {
    if (i) out << ",";
    out << "\n    \"" << detail::json_escape(report.artifacts[i]) << "\"";
  }
  out << (report.artifacts.empty() ? "],\n" : "\n  ],\n");
  out << "  \"config_digest\": \"" << detail::hex64(report.config_digest)
      << "\",\n";
  out << "  \"rows\": [";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (i) out << ",";
    out << "\n    " << detail::report_row_json(report.rows[i]);
  }
  out << (report.rows.empty() ? "]\n" : "\n  ]\n");
  out << "}\n";
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

inline void emit_report_csv(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  out << metrics_csv_header() << "\n";
  for (const auto& r : report.rows) out << metrics_row_csv(r) << "\n";
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

inline void emit_metrics_jsonl(const std::vector<MetricsRow>& rows,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataFault::io_failure, "cannot write " + path);
  for (const auto& r : rows) out << metrics_row_jsonl(r) << "\n";
  if (!out) throw DataError(DataFault::io_failure, "write failed: " + path);
}

}  // namespace badpix
