#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lsnpc/classifier.hpp"
#include "lsnpc/correction.hpp"
#include "lsnpc/dataset.hpp"
#include "lsnpc/metrics.hpp"
#include "lsnpc/model.hpp"
#include "lsnpc/noise.hpp"
#include "lsnpc/theory.hpp"

namespace lsnpc {

/// Raised for malformed or inconsistent configuration files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a pipeline stage fails; the message starts with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

enum class Paradigm : std::uint8_t { Unsupervised, SemiSupervised };
std::string to_string(Paradigm p);
Paradigm parse_paradigm(const std::string& name);

struct SweepConfig {
  std::vector<double> nu0_values{2.01, 4.0, 8.0};
  std::vector<std::string> nu_values{"2.01", "4", "learned"};  // numbers > 2 or "learned"
};

struct TheoryConfig {
  std::uint64_t seed = 1;
  // Theorem 1: random tiny models with m = 1, k = 2.
  std::size_t theorem1_instances = 50;
  std::size_t tiny_d = 2;
  std::size_t tiny_hidden = 16;
  double tiny_nu = 4.0;
  QuadratureGrid grid{-30.0, 30.0, 0.05};
  std::size_t hermite_order = 40;
  double theorem1_tolerance = 1e-3;
  // Theorem 2 and the Gaussian corollary on trained models.
  double nu = 4.0;
  std::size_t train_epochs = 20;
  NoiseKind noise_kind = NoiseKind::Sym;
  double noise_rate = 0.5;
  std::size_t pairs = 200;
  std::size_t sample_rows = 50;
  std::size_t mc_samples = 4000;
  double inflation = 1.5;
  double max_exponent = 2.3;
  // Bernoulli amortization family.
  std::vector<std::size_t> amortization_k{20, 80, 320};
  double amortization_matched = 0.01;
  double amortization_a = 0.9;
  double amortization_b = 0.5;
  std::size_t amortization_positives = 2;
};

struct ExperimentConfig {
  GeneratorConfig generator;   // used when data_path is empty
  std::string data_path;       // .lsds binary or .csv (d features then k labels)
  std::vector<NoiseKind> noise_kinds{NoiseKind::Sym};
  std::vector<double> noise_rates{0.0, 0.3, 0.4, 0.5};
  std::vector<Paradigm> paradigms{Paradigm::Unsupervised};
  SplitSpec split{0.6, 0.2, 0.2, 0.15, 1};
  ModelConfig model;           // d and k are filled from the data
  TrainConfig base;
  BaseArchitecture base_arch;
  LsnpcTrainConfig lsnpc;
  CorrectionConfig correction;
  std::size_t knn_k = 5;
  VacuousLabel macro_vacuous = VacuousLabel::Perfect;  // labels never present nor predicted
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "runs";
  SweepConfig sweep;
  TheoryConfig theory;

  /// Throws ConfigError.
  void validate() const;
  /// Every result-affecting setting as sorted "section.key = value" lines.
  std::string canonical() const;
};

/// Sectioned key = value text; unknown sections or keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

/// One LSNPC configuration trained and evaluated per (setting, seed).
struct Variant {
  std::string tag;     // file prefix
  std::string method;  // report label
  ModelConfig model;
  Paradigm paradigm = Paradigm::Unsupervised;
};

/// One variant per configured paradigm, labelled "LSNPC" and "LSNPC-semi".
std::vector<Variant> default_variants(const ExperimentConfig& cfg);

enum class Stage : std::uint8_t { GenerateData, Corrupt, TrainBase, TrainLsnpc, Correct, Evaluate };
std::string to_string(Stage s);

/// Files live under output_dir:
///   data/seed<S>/dataset.lsds
///   <Kind>_nr<NR>/seed<S>/{transition.txt, noisy_train.csv, noisy_validation.csv, base.ckpt,
///                          baseline_test.csv, knn_test.csv, <tag>.ckpt, <tag>_correction.csv, metrics.csv}
///   report.csv, report.txt, manifest.txt
std::filesystem::path dataset_path(const ExperimentConfig& cfg, std::uint64_t seed);
std::filesystem::path cell_dir(const ExperimentConfig& cfg, NoiseKind kind, double nr, std::uint64_t seed);

/// Runs one stage for every seed and noise cell, reading earlier artifacts from disk.
void run_stage(const ExperimentConfig& cfg, Stage stage, const std::vector<Variant>& variants, bool quiet = true);

struct RunArtifacts {
  std::filesystem::path root;
  ExperimentReport report;
  std::vector<RunMetric> runs;
  std::string manifest;
};

/// Writes manifest.txt: config hash plus a SHA-256 per artifact file.
std::string write_manifest(const ExperimentConfig& cfg);

/// All stages in order, then the aggregated report and manifest.
RunArtifacts run_experiment(const ExperimentConfig& cfg, bool quiet = true);
RunArtifacts run_variants(const ExperimentConfig& cfg, const std::vector<Variant>& variants, bool quiet = true);

/// One unsupervised variant per (nu0, nu) cell sharing data and base classifiers.
RunArtifacts sweep_sensitivity(const ExperimentConfig& cfg, const std::vector<double>& nu0_values,
                               const std::vector<std::string>& nu_values, bool quiet = true);

/// Student ("LSNPC") against Normal ("GAUSS") proposals on identical data and base checkpoints.
RunArtifacts run_ablation(const ExperimentConfig& cfg, bool quiet = true);

struct TheoryReport {
  std::vector<CheckRow> rows;  // theorem1, constants, theorem2, gaussian, amortization
  std::vector<Theorem1Result> theorem1;
  std::vector<std::string> theorem1_errors;  // per-instance failures (e.g. grid too narrow)
  BoundConstants student_constants;
  BoundConstants gauss_constants;
  StudentBound student_bound;
  std::vector<BoundRow> theorem2;
  std::vector<BoundRow> gaussian;
  double gaussian_exponent = 0;
  std::vector<std::pair<std::size_t, AmortizationResult>> amortization;
  double max_relative_se = 0;  // max MC standard error / bound over Theorem 2 rows
  double theorem1_seconds = 0;

  std::string text() const;
};

/// Theorem 1 quadrature on random tiny models.
std::vector<Theorem1Result> theorem1_instances(const TheoryConfig& cfg, std::vector<std::string>* errors = nullptr);

/// Trains the Student (nu = nu0 = theory.nu) and Normal models in place and runs every check;
/// writes theory/verification.{txt,csv} under output_dir.
TheoryReport verify_all(const ExperimentConfig& cfg, bool quiet = true);

/// Plain 0/1 label text, one row per line.
std::string labels_csv(const LabelMatrix& y);
LabelMatrix parse_labels_csv(const std::string& text);

}  // namespace lsnpc
