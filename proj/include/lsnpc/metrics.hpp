#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsnpc/matrix.hpp"

namespace lsnpc {

struct LabelCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// How macro-F1 treats a label that never occurs and is never predicted.
enum class VacuousLabel : std::uint8_t { Perfect, Skip };

struct F1Report {
  double micro_f1 = 0;
  double macro_f1 = 0;
  std::vector<LabelCounts> per_label;
};

std::vector<LabelCounts> label_counts(const LabelMatrix& truth, const LabelMatrix& pred);
double micro_f1(const LabelMatrix& truth, const LabelMatrix& pred);
double macro_f1(const LabelMatrix& truth, const LabelMatrix& pred, VacuousLabel vacuous = VacuousLabel::Perfect);
F1Report f1_report(const LabelMatrix& truth, const LabelMatrix& pred, VacuousLabel vacuous = VacuousLabel::Perfect);

/// One metric value from one seed.
struct RunMetric {
  std::string setting;
  double nr = 0;
  std::string method;
  std::string metric;
  std::uint64_t seed = 0;
  double value = 0;
};

/// Aggregated row; mean and std are scaled by 100.
struct ReportRow {
  std::string setting;
  double nr = 0;
  std::string method;
  std::string metric;
  double mean = 0;
  double std = 0;
  std::size_t n_seeds = 0;
  bool operator==(const ReportRow&) const = default;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  const ReportRow* find(const std::string& setting, double nr, const std::string& method,
                        const std::string& metric) const;
};

/// Mean and sample (n-1) standard deviation per (setting, nr, method, metric), sorted.
ExperimentReport build_report(const std::vector<RunMetric>& runs);

std::string report_csv(const ExperimentReport& report);
ExperimentReport parse_report_csv(const std::string& text);
std::string report_text(const ExperimentReport& report);

}  // namespace lsnpc
