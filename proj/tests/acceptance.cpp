#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/experiment.hpp"
#include "oracles.hpp"

using namespace lsnpc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

void progress(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// Mean over seeds of one (setting, nr, method, metric) cell, in [0, 1].
class Means {
 public:
  explicit Means(const std::vector<RunMetric>& runs) {
    for (const auto& r : runs) {
      auto& [sum, n] = cells_[key(r.setting, r.nr, r.method, r.metric)];
      sum += r.value;
      ++n;
    }
  }
  double operator()(const std::string& setting, double nr, const std::string& method,
                    const std::string& metric = "micro_f1") const {
    const auto it = cells_.find(key(setting, nr, method, metric));
    if (it == cells_.end()) throw std::runtime_error("no runs for " + key(setting, nr, method, metric));
    return it->second.first / double(it->second.second);
  }

 private:
  static std::string key(const std::string& s, double nr, const std::string& m, const std::string& metric) {
    return s + "|" + io::shortest(nr) + "|" + m + "|" + metric;
  }
  std::map<std::string, std::pair<double, std::size_t>> cells_;
};

struct Benchmark {
  std::vector<RunMetric> runs;
  double seconds_per_seed = 0;
};

Benchmark run_benchmark(const ExperimentConfig& base_cfg, const fs::path& out) {
  ExperimentConfig cfg = base_cfg;
  cfg.output_dir = (out / "benchmark").string();
  cfg.noise_kinds = {NoiseKind::Sym, NoiseKind::Pair};
  cfg.noise_rates = {0.0, 0.3, 0.4, 0.5};
  cfg.paradigms = {Paradigm::Unsupervised, Paradigm::SemiSupervised};
  cfg.seeds = {1, 2, 3, 4, 5};
  progress("benchmark: 2 noise kinds x 4 rates x 5 seeds, both paradigms");
  const auto t0 = std::chrono::steady_clock::now();
  const auto art = run_experiment(cfg, false);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << report_text(art.report);
  return {art.runs, secs / double(cfg.seeds.size())};
}

Outcome criterion1(const Means& m, double seconds_per_seed) {
  const double gain = m("Sym", 0.5, "LSNPC") - m("Sym", 0.5, "Baseline");
  const double macro = m("Sym", 0.5, "LSNPC", "macro_f1") - m("Sym", 0.5, "Baseline", "macro_f1");
  const bool ok = gain >= 0.03 && macro >= -0.01 && seconds_per_seed <= 20 * 60;
  return {ok, "Sym 50%: micro gain " + fmt(gain) + " (need >= 0.03), macro change " + fmt(macro) +
                  " (need >= -0.01), " + fmt(seconds_per_seed / 60, 1) + " min per seed for the full grid (limit 20)"};
}

Outcome criterion2(const Means& m) {
  bool ok = true;
  std::string detail;
  for (const char* s : {"Sym", "Pair"}) {
    const double g50 = m(s, 0.5, "LSNPC") - m(s, 0.5, "Baseline");
    const double g30 = m(s, 0.3, "LSNPC") - m(s, 0.3, "Baseline");
    ok = ok && g50 >= g30 - 0.01;
    detail += std::string(detail.empty() ? "" : "; ") + s + " gain@50% " + fmt(g50) + " vs gain@30% " + fmt(g30);
  }
  return {ok, detail};
}

Outcome criterion3(const Means& m) {
  std::size_t within = 0, strictly = 0;
  std::string detail;
  for (const char* s : {"Sym", "Pair"})
    for (double nr : {0.3, 0.4}) {
      const double semi = m(s, nr, "LSNPC-semi"), unsup = m(s, nr, "LSNPC");
      within += semi >= unsup - 0.005;
      strictly += semi > unsup;
      detail += std::string(detail.empty() ? "" : "; ") + s + "@" + fmt(nr, 1) + " semi " + fmt(semi) + " unsup " + fmt(unsup);
    }
  return {within == 4 && strictly >= 3,
          std::to_string(within) + "/4 within 0.005, " + std::to_string(strictly) + "/4 strictly greater: " + detail};
}

Outcome criterion4(const Means& m) {
  double worst = 0;
  std::string detail;
  for (const char* s : {"Sym", "Pair"}) {
    const double diff = m(s, 0.0, "LSNPC") - m(s, 0.0, "Baseline");
    worst = std::max(worst, std::abs(diff));
    detail += std::string(detail.empty() ? "" : "; ") + s + " LSNPC - baseline " + fmt(diff);
  }
  return {worst <= 0.03, detail + " (need |diff| <= 0.03)"};
}

Outcome criterion5(const TheoryReport& rep, double seconds) {
  std::size_t checked = 0, passed = 0, negative = 0;
  for (const auto& r : rep.theorem1) {
    if (!r.entropy_nonnegative()) {
      ++negative;
      continue;
    }
    ++checked;
    passed += r.lhs <= r.rhs + 1e-3;
  }
  const bool ok = rep.theorem1_errors.empty() && passed == checked && rep.theorem1.size() == 50 && seconds <= 300;
  return {ok, std::to_string(passed) + "/" + std::to_string(checked) + " non-negative-entropy instances hold, " +
                  std::to_string(negative) + " negative-entropy reported, " + std::to_string(rep.theorem1_errors.size()) +
                  " grid errors, " + fmt(seconds, 1) + " s"};
}

Outcome criterion6(const TheoryReport& rep) {
  std::size_t held = 0;
  for (const auto& r : rep.theorem2) held += r.holds();
  const bool ok = rep.theorem2.size() == 200 && held == rep.theorem2.size() && rep.max_relative_se < 0.01;
  return {ok, std::to_string(held) + "/" + std::to_string(rep.theorem2.size()) + " pairs bounded, max MC SE / bound " +
                  fmt(rep.max_relative_se, 5)};
}

Outcome criterion7(const TheoryReport& rep) {
  std::size_t held = 0;
  for (const auto& r : rep.gaussian) held += r.holds();
  const bool ok = rep.gaussian.size() == 200 && held == rep.gaussian.size() && rep.gaussian_exponent <= 2.3;
  return {ok, std::to_string(held) + "/" + std::to_string(rep.gaussian.size()) + " pairs bounded, fitted exponent " +
                  fmt(rep.gaussian_exponent, 3) + " (limit 2.3)"};
}

Outcome criterion8(const TheoryReport& rep) {
  const double target = 0.736966;
  bool ok = rep.amortization.size() == 3;
  std::string detail;
  for (const auto& [k, r] : rep.amortization) {
    ok = ok && std::abs(r.kl - target) <= 1e-6;
    detail += std::string(detail.empty() ? "" : ", ") + "k=" + std::to_string(k) + " KL " + fmt(r.kl, 10);
  }
  return {ok, detail + " (target " + fmt(target, 6) + " +- 1e-6)"};
}

Outcome criterion9() {
  CorrectionConfig budget;
  budget.samples_y = 64;
  budget.samples_zhat = 64;
  const std::vector<oracle::Summary> suites{oracle::metrics_suite(1000, 101), oracle::loss_suite(102),
                                            oracle::knn_suite(500, 103), oracle::correction_suite(104, budget, 0.01),
                                            oracle::gradient_suite(105, 100)};
  bool ok = true;
  std::string detail;
  for (const auto& s : suites) {
    ok = ok && s.ok();
    std::ostringstream os;
    os << s.name << " " << s.cases - s.failures << "/" << s.cases << " (worst " << std::setprecision(3) << s.worst << ")";
    detail += (detail.empty() ? "" : "; ") + os.str();
  }
  return {ok, detail};
}

Outcome criterion10(const std::string& source_dir, const fs::path& out) {
  auto cfg = load_config(source_dir + "/configs/smoke.ini");
  auto digest = [&](const std::string& tag) {
    ExperimentConfig c = cfg;
    c.output_dir = (out / "determinism" / tag).string();
    fs::remove_all(c.output_dir);
    run_experiment(c);
    c.theory.theorem1_instances = 3;
    c.theory.train_epochs = 2;
    c.theory.pairs = 20;
    c.theory.sample_rows = 5;
    c.theory.mc_samples = 200;
    verify_all(c);
    return io::read_text((fs::path(c.output_dir) / "manifest.txt").string()) +
           io::read_text((fs::path(c.output_dir) / "theory" / "verification.csv").string());
  };
  const auto a = digest("a"), b = digest("b");
  std::size_t files = 0;
  for (char ch : a) files += ch == '\n';
  return {a == b, a == b ? "two runs produced identical digests over " + std::to_string(files) + " manifest and theory lines"
                         : "digests differ between two identical runs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_runs";
  std::string config = std::string(LSNPC_SOURCE_DIR) + "/configs/default.ini";
  app.add_option("--out", out, "working directory for acceptance runs");
  app.add_option("--config", config, "benchmark configuration");
  CLI11_PARSE(app, argc, argv);

  std::map<int, Outcome> results;
  auto guarded = [&](int id, auto fn) {
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
  };

  ExperimentConfig cfg;
  try {
    cfg = load_config(config);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  fs::create_directories(out);

  progress("oracle suites");
  guarded(9, criterion9);
  progress("determinism");
  guarded(10, [&] { return criterion10(LSNPC_SOURCE_DIR, out); });

  progress("theory checks");
  try {
    ExperimentConfig tc = cfg;
    tc.output_dir = (fs::path(out) / "theory_run").string();
    const auto rep = verify_all(tc, false);
    std::cerr << rep.text();
    guarded(5, [&] { return criterion5(rep, rep.theorem1_seconds); });
    guarded(6, [&] { return criterion6(rep); });
    guarded(7, [&] { return criterion7(rep); });
    guarded(8, [&] { return criterion8(rep); });
  } catch (const std::exception& e) {
    for (int id : {5, 6, 7, 8}) results[id] = {false, std::string("error: ") + e.what()};
  }

  try {
    const auto bench = run_benchmark(cfg, out);
    const Means means(bench.runs);
    guarded(1, [&] { return criterion1(means, bench.seconds_per_seed); });
    guarded(2, [&] { return criterion2(means); });
    guarded(3, [&] { return criterion3(means); });
    guarded(4, [&] { return criterion4(means); });
  } catch (const std::exception& e) {
    for (int id : {1, 2, 3, 4}) results[id] = {false, std::string("error: ") + e.what()};
  }

  bool all = true;
  for (const auto& [id, r] : results) {
    std::cout << "criterion " << std::setw(2) << id << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail << '\n';
    all = all && r.pass;
  }
  return all ? 0 : 1;
}
