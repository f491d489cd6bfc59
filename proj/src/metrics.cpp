#include "lsnpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace lsnpc {

std::vector<LabelCounts> label_counts(const LabelMatrix& truth, const LabelMatrix& pred) {
  require_shape(truth.rows(), truth.cols(), pred.rows(), pred.cols(), "f1");
  std::vector<LabelCounts> counts(truth.cols());
  for (std::size_t r = 0; r < truth.rows(); ++r)
    for (std::size_t c = 0; c < truth.cols(); ++c) {
      const bool t = truth(r, c) != 0, p = pred(r, c) != 0;
      if (t && p) ++counts[c].tp;
      else if (p) ++counts[c].fp;
      else if (t) ++counts[c].fn;
    }
  return counts;
}

namespace {

double f1_from(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

double micro_from(const std::vector<LabelCounts>& counts) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& c : counts) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  return f1_from(tp, fp, fn);
}

double macro_from(const std::vector<LabelCounts>& counts, VacuousLabel vacuous) {
  double total = 0;
  std::size_t used = 0;
  for (const auto& c : counts) {
    if (c.tp + c.fp + c.fn == 0) {
      if (vacuous == VacuousLabel::Skip) continue;
      total += 1.0;
    } else {
      total += f1_from(c.tp, c.fp, c.fn);
    }
    ++used;
  }
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

}  // namespace

double micro_f1(const LabelMatrix& truth, const LabelMatrix& pred) { return micro_from(label_counts(truth, pred)); }

double macro_f1(const LabelMatrix& truth, const LabelMatrix& pred, VacuousLabel vacuous) {
  return macro_from(label_counts(truth, pred), vacuous);
}

F1Report f1_report(const LabelMatrix& truth, const LabelMatrix& pred, VacuousLabel vacuous) {
  F1Report r;
  r.per_label = label_counts(truth, pred);
  r.micro_f1 = micro_from(r.per_label);
  r.macro_f1 = macro_from(r.per_label, vacuous);
  return r;
}

const ReportRow* ExperimentReport::find(const std::string& setting, double nr, const std::string& method,
                                        const std::string& metric) const {
  for (const auto& row : rows)
    if (row.setting == setting && std::abs(row.nr - nr) < 1e-12 && row.method == method && row.metric == metric)
      return &row;
  return nullptr;
}

ExperimentReport build_report(const std::vector<RunMetric>& runs) {
  if (runs.empty()) throw std::invalid_argument("build_report: no runs");
  using Key = std::tuple<std::string, double, std::string, std::string>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : runs) groups[{r.setting, r.nr, r.method, r.metric}].push_back(r.value * 100.0);
  ExperimentReport report;
  for (const auto& [key, values] : groups) {
    ReportRow row{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), 0, 0, values.size()};
    double s = 0;
    for (double v : values) s += v;
    row.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0;
      for (double v : values) ss += (v - row.mean) * (v - row.mean);
      row.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "setting,nr,method,metric,mean,std,n_seeds\n";
  os << std::setprecision(17);
  for (const auto& r : report.rows)
    os << r.setting << ',' << r.nr << ',' << r.method << ',' << r.metric << ',' << r.mean << ',' << r.std << ','
       << r.n_seeds << '\n';
  return os.str();
}

ExperimentReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "setting,nr,method,metric,mean,std,n_seeds")
    throw std::runtime_error("report csv: unexpected header");
  ExperimentReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> cells;
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells.size() != 7) throw std::runtime_error("report csv: expected 7 columns");
    report.rows.push_back(ReportRow{cells[0], std::stod(cells[1]), cells[2], cells[3], std::stod(cells[4]),
                                    std::stod(cells[5]), static_cast<std::size_t>(std::stoul(cells[6]))});
  }
  return report;
}

std::string report_text(const ExperimentReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "setting" << std::setw(6) << "nr" << std::setw(28) << "method" << std::setw(10)
     << "metric" << std::right << std::setw(9) << "mean" << std::setw(9) << "std" << std::setw(7) << "seeds" << '\n';
  os << std::fixed;
  for (const auto& r : report.rows)
    os << std::left << std::setw(10) << r.setting << std::setw(6) << std::setprecision(2) << r.nr << std::setw(28)
       << r.method << std::setw(10) << r.metric << std::right << std::setw(9) << r.mean << std::setw(9) << r.std
       << std::setw(7) << r.n_seeds << '\n';
  return os.str();
}

}  // namespace lsnpc
