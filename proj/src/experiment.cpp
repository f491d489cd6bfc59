#include "lsnpc/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/checkpoint.hpp"

namespace lsnpc {

namespace fs = std::filesystem;

std::string to_string(Paradigm p) { return p == Paradigm::Unsupervised ? "unsupervised" : "semi-supervised"; }

Paradigm parse_paradigm(const std::string& name) {
  if (name == "unsupervised") return Paradigm::Unsupervised;
  if (name == "semi-supervised" || name == "semi") return Paradigm::SemiSupervised;
  throw std::invalid_argument("unknown paradigm: " + name);
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::GenerateData: return "gen-data";
    case Stage::Corrupt: return "corrupt";
    case Stage::TrainBase: return "train-base";
    case Stage::TrainLsnpc: return "train-lsnpc";
    case Stage::Correct: return "correct";
    case Stage::Evaluate: return "eval";
  }
  return "?";
}

namespace {

std::string num(double v) { return io::shortest(v); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto t = trim(s);
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto t = trim(s);
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw std::invalid_argument("not a non-negative integer: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out;
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Gelu: return "gelu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "?";
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adamw"; }

struct Field {
  std::string key;  // section.key
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool hashed = true;
};

void add_size(std::vector<Field>& f, const std::string& key, std::size_t& v) {
  f.push_back({key, [&v](const std::string& s) { v = parse_uint(s); }, [&v] { return std::to_string(v); }});
}
void add_u64(std::vector<Field>& f, const std::string& key, std::uint64_t& v) {
  f.push_back({key, [&v](const std::string& s) { v = parse_uint(s); }, [&v] { return std::to_string(v); }});
}
void add_double(std::vector<Field>& f, const std::string& key, double& v) {
  f.push_back({key, [&v](const std::string& s) { v = parse_double(s); }, [&v] { return num(v); }});
}
void add_bool(std::vector<Field>& f, const std::string& key, bool& v) {
  f.push_back({key, [&v](const std::string& s) { v = parse_bool(s); }, [&v] { return v ? "true" : "false"; }});
}
void add_optimizer(std::vector<Field>& f, const std::string& key, OptimizerKind& v) {
  f.push_back({key, [&v](const std::string& s) { v = parse_optimizer(trim(s)); }, [&v] { return optimizer_name(v); }});
}

std::vector<Field> schema(ExperimentConfig& c) {
  std::vector<Field> f;
  f.push_back({"data.path", [&c](const std::string& s) { c.data_path = trim(s); }, [&c] { return c.data_path; }});
  add_size(f, "data.n", c.generator.n);
  add_size(f, "data.d", c.generator.d);
  add_size(f, "data.k", c.generator.k);
  add_size(f, "data.rank", c.generator.rank);
  add_double(f, "data.feature_noise", c.generator.feature_noise);
  add_double(f, "data.label_offset", c.generator.label_offset);
  add_double(f, "data.offset_spread", c.generator.offset_spread);
  add_bool(f, "data.identity_embedding", c.generator.identity_embedding);

  f.push_back({"noise.kinds",
               [&c](const std::string& s) {
                 c.noise_kinds.clear();
                 for (const auto& v : split_list(s)) c.noise_kinds.push_back(parse_noise_kind(v));
               },
               [&c] { return join(c.noise_kinds, [](NoiseKind k) { return to_string(k); }); }});
  f.push_back({"noise.rates",
               [&c](const std::string& s) {
                 c.noise_rates.clear();
                 for (const auto& v : split_list(s)) c.noise_rates.push_back(parse_double(v));
               },
               [&c] { return join(c.noise_rates, num); }});

  add_double(f, "split.train", c.split.train);
  add_double(f, "split.validation", c.split.validation);
  add_double(f, "split.test", c.split.test);
  add_double(f, "split.clean_share", c.split.clean_share);

  f.push_back({"experiment.paradigms",
               [&c](const std::string& s) {
                 c.paradigms.clear();
                 for (const auto& v : split_list(s)) c.paradigms.push_back(parse_paradigm(v));
               },
               [&c] { return join(c.paradigms, [](Paradigm p) { return to_string(p); }); }});
  f.push_back({"experiment.seeds",
               [&c](const std::string& s) {
                 c.seeds.clear();
                 for (const auto& v : split_list(s)) c.seeds.push_back(parse_uint(v));
               },
               [&c] { return join(c.seeds, [](std::uint64_t v) { return std::to_string(v); }); }});
  f.push_back({"experiment.output_dir", [&c](const std::string& s) { c.output_dir = trim(s); },
               [&c] { return c.output_dir; }, false});
  add_size(f, "experiment.knn_k", c.knn_k);
  f.push_back({"experiment.macro_vacuous",
               [&c](const std::string& s) {
                 const auto v = trim(s);
                 if (v == "perfect") c.macro_vacuous = VacuousLabel::Perfect;
                 else if (v == "skip") c.macro_vacuous = VacuousLabel::Skip;
                 else throw std::invalid_argument("expected 'perfect' or 'skip', got '" + v + "'");
               },
               [&c] { return std::string(c.macro_vacuous == VacuousLabel::Perfect ? "perfect" : "skip"); }});

  auto& m = c.model;
  add_size(f, "model.m", m.m);
  add_double(f, "model.nu", m.nu);
  add_double(f, "model.nu0", m.nu0);
  add_double(f, "model.beta", m.beta);
  add_double(f, "model.eta", m.eta);
  add_double(f, "model.scale_floor", m.scale_floor);
  f.push_back({"model.proposal", [&m](const std::string& s) { m.proposal = parse_proposal(trim(s)); },
               [&m] { return to_string(m.proposal); }});
  f.push_back({"model.nu_mode", [&m](const std::string& s) { m.nu_mode = parse_nu_mode(trim(s)); },
               [&m] { return to_string(m.nu_mode); }});
  f.push_back({"model.coupling", [&m](const std::string& s) { m.coupling = parse_coupling(trim(s)); },
               [&m] { return to_string(m.coupling); }});
  add_size(f, "model.hidden", m.hidden);
  add_size(f, "model.label_hidden", m.label_hidden);
  add_size(f, "model.label_embedding", m.label_embedding);
  add_size(f, "model.label_layers", m.label_layers);
  add_size(f, "model.shift_layers", m.shift_layers);
  add_size(f, "model.samples_y", m.samples_y);
  add_size(f, "model.samples_z", m.samples_z);

  auto& b = c.base;
  add_double(f, "base.learning_rate", b.learning_rate);
  add_size(f, "base.epochs", b.epochs);
  add_size(f, "base.batch_size", b.batch_size);
  add_optimizer(f, "base.optimizer", b.optimizer);
  add_double(f, "base.weight_decay", b.weight_decay);
  add_double(f, "base.cosine_cycle", b.cosine_cycle);
  add_bool(f, "base.shuffle", b.shuffle);
  f.push_back({"base.hidden",
               [&c](const std::string& s) {
                 c.base_arch.hidden.clear();
                 for (const auto& v : split_list(s)) c.base_arch.hidden.push_back(parse_uint(v));
               },
               [&c] { return join(c.base_arch.hidden, [](std::size_t v) { return std::to_string(v); }); }});
  f.push_back({"base.activation", [&c](const std::string& s) { c.base_arch.activation = parse_activation(trim(s)); },
               [&c] { return activation_name(c.base_arch.activation); }});

  auto& l = c.lsnpc;
  add_double(f, "lsnpc.learning_rate", l.learning_rate);
  add_size(f, "lsnpc.epochs", l.epochs);
  add_size(f, "lsnpc.clean_epochs", l.clean_epochs);
  add_size(f, "lsnpc.batch_size", l.batch_size);
  add_optimizer(f, "lsnpc.optimizer", l.optimizer);
  add_double(f, "lsnpc.weight_decay", l.weight_decay);
  add_double(f, "lsnpc.cosine_cycle", l.cosine_cycle);
  add_bool(f, "lsnpc.select_by_validation", l.select_by_validation);

  auto& r = c.correction;
  add_size(f, "correction.samples_y", r.samples_y);
  add_size(f, "correction.samples_zhat", r.samples_zhat);
  add_size(f, "correction.samples_z", r.samples_z);
  add_double(f, "correction.threshold", r.threshold);
  f.push_back({"correction.chunk_rows", [&r](const std::string& s) { r.chunk_rows = parse_uint(s); },
               [&r] { return std::to_string(r.chunk_rows); }, false});

  f.push_back({"sweep.nu0_values",
               [&c](const std::string& s) {
                 c.sweep.nu0_values.clear();
                 for (const auto& v : split_list(s)) c.sweep.nu0_values.push_back(parse_double(v));
               },
               [&c] { return join(c.sweep.nu0_values, num); }});
  f.push_back({"sweep.nu_values", [&c](const std::string& s) { c.sweep.nu_values = split_list(s); },
               [&c] { return join(c.sweep.nu_values, [](const std::string& v) { return v; }); }});

  auto& t = c.theory;
  add_u64(f, "theory.seed", t.seed);
  add_size(f, "theory.theorem1_instances", t.theorem1_instances);
  add_size(f, "theory.tiny_d", t.tiny_d);
  add_size(f, "theory.tiny_hidden", t.tiny_hidden);
  add_double(f, "theory.tiny_nu", t.tiny_nu);
  add_double(f, "theory.grid_lo", t.grid.lo);
  add_double(f, "theory.grid_hi", t.grid.hi);
  add_double(f, "theory.grid_step", t.grid.step);
  add_size(f, "theory.hermite_order", t.hermite_order);
  add_double(f, "theory.theorem1_tolerance", t.theorem1_tolerance);
  add_double(f, "theory.nu", t.nu);
  add_size(f, "theory.train_epochs", t.train_epochs);
  f.push_back({"theory.noise_kind", [&t](const std::string& s) { t.noise_kind = parse_noise_kind(trim(s)); },
               [&t] { return to_string(t.noise_kind); }});
  add_double(f, "theory.noise_rate", t.noise_rate);
  add_size(f, "theory.pairs", t.pairs);
  add_size(f, "theory.sample_rows", t.sample_rows);
  add_size(f, "theory.mc_samples", t.mc_samples);
  add_double(f, "theory.inflation", t.inflation);
  add_double(f, "theory.max_exponent", t.max_exponent);
  f.push_back({"theory.amortization_k",
               [&t](const std::string& s) {
                 t.amortization_k.clear();
                 for (const auto& v : split_list(s)) t.amortization_k.push_back(parse_uint(v));
               },
               [&t] { return join(t.amortization_k, [](std::size_t v) { return std::to_string(v); }); }});
  add_double(f, "theory.amortization_matched", t.amortization_matched);
  add_double(f, "theory.amortization_a", t.amortization_a);
  add_double(f, "theory.amortization_b", t.amortization_b);
  add_size(f, "theory.amortization_positives", t.amortization_positives);
  return f;
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    if (data_path.empty()) {
      if (generator.n < 10 || generator.d == 0 || generator.k < 2 || generator.rank == 0)
        throw std::invalid_argument("data: need n >= 10, d >= 1, k >= 2, rank >= 1");
      if (generator.identity_embedding && generator.rank != generator.d)
        throw std::invalid_argument("data: identity_embedding requires rank == d");
    }
    if (noise_kinds.empty()) throw std::invalid_argument("noise: at least one kind is required");
    if (noise_rates.empty()) throw std::invalid_argument("noise: at least one rate is required");
    for (double r : noise_rates)
      if (!(r >= 0 && r < 1)) throw std::invalid_argument("noise: rates must lie in [0, 1), got " + num(r));
    if (paradigms.empty()) throw std::invalid_argument("experiment: at least one paradigm is required");
    if (seeds.empty()) throw std::invalid_argument("experiment: at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw std::invalid_argument("experiment: duplicate seeds");
    if (knn_k == 0) throw std::invalid_argument("experiment: knn_k must be positive");
    if (output_dir.empty()) throw std::invalid_argument("experiment: output_dir must not be empty");
    const double total = split.train + split.validation + split.test;
    if (split.train <= 0 || split.validation < 0 || split.test <= 0 || std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("split: fractions must be positive (validation may be 0) and sum to 1");
    if (split.clean_share < 0 || split.clean_share > 1) throw std::invalid_argument("split: clean_share must lie in [0, 1]");
    ModelConfig mc = model;
    mc.d = 1;
    mc.k = 2;
    mc.validate();
    base.validate();
    if (base_arch.hidden.empty()) throw std::invalid_argument("base: at least one hidden layer is required");
    lsnpc.validate();
    correction.validate();
    for (double v : sweep.nu0_values)
      if (!(v > 2)) throw std::invalid_argument("sweep: nu0 values must exceed 2");
    for (const auto& v : sweep.nu_values)
      if (v != "learned" && !(parse_double(v) > 2)) throw std::invalid_argument("sweep: nu values must exceed 2 or be 'learned'");
    theory.grid.validate();
    if (!(theory.nu > 2)) throw std::invalid_argument("theory: nu must exceed 2");
    if (!(theory.tiny_nu > 2)) throw std::invalid_argument("theory: tiny_nu must exceed 2");
    if (theory.hermite_order == 0) throw std::invalid_argument("theory: hermite_order must be positive");
    if (!(theory.inflation >= 1)) throw std::invalid_argument("theory: inflation must be at least 1");
    if (theory.pairs == 0 || theory.sample_rows == 0 || theory.mc_samples < 2)
      throw std::invalid_argument("theory: pairs, sample_rows must be positive and mc_samples >= 2");
    if (!(theory.noise_rate >= 0 && theory.noise_rate < 1)) throw std::invalid_argument("theory: noise_rate must lie in [0, 1)");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::canonical() const {
  ExperimentConfig copy = *this;
  std::vector<std::string> lines;
  for (const auto& f : schema(copy))
    if (f.hashed) lines.push_back(f.key + " = " + f.get());
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  auto fields = schema(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == full; });
      if (it == fields.end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      try {
        it->set(value.data());
      } catch (const std::exception& e) {
        throw ConfigError("config: " + full + ": " + e.what());
      }
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config '" + path + "': " + e.what());
  }
  return parse_config(text);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string sha256_file(const std::string& path) {
  const auto bytes = io::read_file(path);
  return sha256_hex(std::string(bytes.begin(), bytes.end()));
}

std::vector<Variant> default_variants(const ExperimentConfig& cfg) {
  std::vector<Variant> v;
  for (auto p : cfg.paradigms) {
    const bool semi = p == Paradigm::SemiSupervised;
    v.push_back({semi ? "lsnpc_semi" : "lsnpc", semi ? "LSNPC-semi" : "LSNPC", cfg.model, p});
  }
  return v;
}

std::string labels_csv(const LabelMatrix& y) {
  std::string out;
  out.reserve(y.rows() * (2 * y.cols()));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) {
      if (c) out += ',';
      out += y(r, c) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

LabelMatrix parse_labels_csv(const std::string& text) {
  std::vector<std::uint8_t> data;
  std::size_t rows = 0, cols = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_list(line);
    if (rows == 0) cols = cells.size();
    if (cells.size() != cols) throw std::runtime_error("labels csv: ragged row " + std::to_string(rows + 1));
    for (const auto& c : cells) {
      if (c != "0" && c != "1") throw std::runtime_error("labels csv: non-binary value '" + c + "'");
      data.push_back(c == "1");
    }
    ++rows;
  }
  return LabelMatrix(rows, cols, std::move(data));
}

fs::path dataset_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.output_dir) / "data" / ("seed" + std::to_string(seed)) / "dataset.lsds";
}

namespace {

std::string setting_name(NoiseKind k) { return k == NoiseKind::Sym ? "Sym" : "Pair"; }

}  // namespace

fs::path cell_dir(const ExperimentConfig& cfg, NoiseKind kind, double nr, std::uint64_t seed) {
  return fs::path(cfg.output_dir) / (setting_name(kind) + "_nr" + num(nr)) / ("seed" + std::to_string(seed));
}

namespace {

struct SplitData {
  FeatureDataset ds;
  std::vector<std::size_t> train, validation, clean, test;
};

SplitData load_split(const ExperimentConfig& cfg, std::uint64_t seed) {
  SplitData s{load_dataset(dataset_path(cfg, seed).string()), {}, {}, {}, {}};
  if (s.ds.splits.size() != s.ds.n()) throw std::runtime_error("dataset has no split tags");
  for (std::size_t i = 0; i < s.ds.n(); ++i) switch (s.ds.splits[i]) {
      case SplitTag::Train: s.train.push_back(i); break;
      case SplitTag::Validation: s.validation.push_back(i); break;
      case SplitTag::Clean: s.clean.push_back(i); break;
      case SplitTag::Test: s.test.push_back(i); break;
      case SplitTag::None: break;
    }
  return s;
}

std::uint64_t cell_code(NoiseKind kind, double nr) {
  return (static_cast<std::uint64_t>(kind) << 32) | static_cast<std::uint64_t>(std::llround(nr * 1e6));
}

BaseClassifier load_base(const ExperimentConfig& cfg, const SplitData& s, const fs::path& dir, std::uint64_t seed) {
  BaseClassifier h(s.ds.d(), s.ds.k(), cfg.base_arch, seed);
  h.load_state(load_checkpoint((dir / "base.ckpt").string()));
  return h;
}

LabelMatrix read_labels(const fs::path& p) { return parse_labels_csv(io::read_text(p.string())); }

void stage_generate(const ExperimentConfig& cfg, std::uint64_t seed) {
  FeatureDataset ds;
  if (cfg.data_path.empty()) {
    GeneratorConfig g = cfg.generator;
    g.seed = seed;
    ds = generate_synthetic(g);
  } else if (cfg.data_path.size() > 4 && cfg.data_path.substr(cfg.data_path.size() - 4) == ".csv") {
    ds = import_csv(io::read_text(cfg.data_path), cfg.generator.k);
  } else {
    ds = load_dataset(cfg.data_path);
  }
  SplitSpec spec = cfg.split;
  spec.seed = seed;
  const auto idx = split_dataset(ds.n(), spec);
  ds.splits.assign(ds.n(), SplitTag::None);
  for (auto i : idx.train) ds.splits[i] = SplitTag::Train;
  for (auto i : idx.validation) ds.splits[i] = SplitTag::Validation;
  for (auto i : idx.clean) ds.splits[i] = SplitTag::Clean;
  for (auto i : idx.test) ds.splits[i] = SplitTag::Test;
  ds.validate();
  const auto path = dataset_path(cfg, seed);
  fs::create_directories(path.parent_path());
  save_dataset(ds, path.string());
}

void stage_corrupt(const SplitData& s, NoiseKind kind, double nr, std::uint64_t seed,
                   const fs::path& dir) {
  const auto t = build_transition_matrix(kind, s.ds.k(), nr);
  const auto code = cell_code(kind, nr);
  const auto noisy_train = corrupt_labels(s.ds.y.select_rows(s.train), t, derive_seed(seed, streams::kCorrupt, code));
  const auto noisy_val =
      corrupt_labels(s.ds.y.select_rows(s.validation), t, derive_seed(seed, streams::kCorrupt, code + (1ULL << 40)));
  fs::create_directories(dir);
  io::write_text((dir / "transition.txt").string(), format_transition_matrix(t));
  io::write_text((dir / "noisy_train.csv").string(), labels_csv(noisy_train));
  io::write_text((dir / "noisy_validation.csv").string(), labels_csv(noisy_val));
}

void stage_train_base(const ExperimentConfig& cfg, const SplitData& s, std::uint64_t seed, const fs::path& dir) {
  const auto xtr = s.ds.x.select_rows(s.train), xval = s.ds.x.select_rows(s.validation);
  const auto ytr = read_labels(dir / "noisy_train.csv"), yval = read_labels(dir / "noisy_validation.csv");
  if (ytr.rows() != xtr.rows() || yval.rows() != xval.rows()) throw std::runtime_error("noisy labels do not match the split");
  TrainConfig tc = cfg.base;
  tc.seed = seed;
  const auto h = train_base(xtr, ytr, tc, cfg.base_arch, &xval, &yval);
  save_checkpoint((dir / "base.ckpt").string(), h.state());
}

void stage_train_lsnpc(const ExperimentConfig& cfg, const SplitData& s, const Variant& v, std::uint64_t seed,
                       const fs::path& dir) {
  const auto h = load_base(cfg, s, dir, seed);
  ModelConfig mc = v.model;
  mc.d = s.ds.d();
  mc.k = s.ds.k();
  LsnpcModel model(mc, seed);
  const auto xtr = s.ds.x.select_rows(s.train), xval = s.ds.x.select_rows(s.validation);
  NoisySet noisy{xtr, h.predict_probs(xtr)};
  CleanSet clean;
  if (v.paradigm == Paradigm::SemiSupervised) {
    if (s.clean.empty()) throw std::runtime_error("semi-supervised training needs a clean subset (split.clean_share > 0)");
    const auto xc = s.ds.x.select_rows(s.clean);
    clean = CleanSet{xc, s.ds.y.select_rows(s.clean), h.predict_probs(xc)};
  }
  ValidationSet val{xval, read_labels(dir / "noisy_validation.csv"), h.predict_probs(xval)};
  LsnpcTrainConfig lc = cfg.lsnpc;
  lc.seed = seed;
  CorrectionConfig cc = cfg.correction;
  cc.seed = derive_seed(seed, streams::kValidation);
  train_semi_supervised(model, noisy, clean, lc, xval.rows() ? &val : nullptr, &cc);
  save_model(model, (dir / (v.tag + ".ckpt")).string());
}

void stage_correct(const ExperimentConfig& cfg, const SplitData& s, const std::vector<Variant>& variants,
                   std::uint64_t seed, const fs::path& dir) {
  // Only test features reach this stage; true test labels stay in the evaluator.
  const auto h = load_base(cfg, s, dir, seed);
  const auto xte = s.ds.x.select_rows(s.test);
  const auto probs = h.predict_probs(xte);
  io::write_text((dir / "baseline_test.csv").string(), labels_csv(binarize(probs, 0.5)));
  const auto xtr = s.ds.x.select_rows(s.train);
  io::write_text((dir / "knn_test.csv").string(),
                 labels_csv(knn_correct(xtr, read_labels(dir / "noisy_train.csv"), xte, cfg.knn_k)));
  for (const auto& v : variants) {
    const auto model = load_model((dir / (v.tag + ".ckpt")).string());
    CorrectionConfig cc = cfg.correction;
    cc.seed = seed;
    io::write_text((dir / (v.tag + "_correction.csv")).string(), correction_csv(correct(model, probs, xte, cc)));
  }
}

LabelMatrix correction_labels(const std::string& text, std::size_t n) {
  std::istringstream is(text);
  std::string line;
  for (std::size_t i = 0; i < n; ++i)
    if (!std::getline(is, line)) throw std::runtime_error("correction file is truncated");
  std::ostringstream os;
  os << is.rdbuf();
  auto y = parse_labels_csv(os.str());
  if (y.rows() != n) throw std::runtime_error("correction file has " + std::to_string(y.rows()) + " label rows, expected " + std::to_string(n));
  return y;
}

std::vector<RunMetric> stage_evaluate(const ExperimentConfig& cfg, const SplitData& s, const std::vector<Variant>& variants, NoiseKind kind,
                                      double nr, std::uint64_t seed, const fs::path& dir) {
  const auto truth = s.ds.y.select_rows(s.test);
  std::vector<std::pair<std::string, LabelMatrix>> preds;
  preds.emplace_back("Baseline", read_labels(dir / "baseline_test.csv"));
  preds.emplace_back("KNN", read_labels(dir / "knn_test.csv"));
  for (const auto& v : variants)
    preds.emplace_back(v.method, correction_labels(io::read_text((dir / (v.tag + "_correction.csv")).string()), truth.rows()));
  std::vector<RunMetric> runs;
  std::ostringstream os;
  os << "method,micro_f1,macro_f1\n" << std::setprecision(17);
  for (const auto& [method, pred] : preds) {
    require_shape(truth.rows(), truth.cols(), pred.rows(), pred.cols(), method.c_str());
    const auto rep = f1_report(truth, pred, cfg.macro_vacuous);
    runs.push_back({setting_name(kind), nr, method, "micro_f1", seed, rep.micro_f1});
    runs.push_back({setting_name(kind), nr, method, "macro_f1", seed, rep.macro_f1});
    os << method << ',' << rep.micro_f1 << ',' << rep.macro_f1 << '\n';
  }
  io::write_text((dir / "metrics.csv").string(), os.str());
  return runs;
}

template <typename F>
void for_each_cell(const ExperimentConfig& cfg, F f) {
  for (auto seed : cfg.seeds)
    for (auto kind : cfg.noise_kinds)
      for (double nr : cfg.noise_rates) f(kind, nr, seed);
}

std::vector<RunMetric> run_stage_collect(const ExperimentConfig& cfg, Stage stage, const std::vector<Variant>& variants,
                                         bool quiet) {
  std::vector<RunMetric> runs;
  try {
    if (stage == Stage::GenerateData) {
      for (auto seed : cfg.seeds) {
        if (!quiet) std::cerr << "[gen-data] seed " << seed << std::endl;
        stage_generate(cfg, seed);
      }
      return runs;
    }
    for_each_cell(cfg, [&](NoiseKind kind, double nr, std::uint64_t seed) {
      const auto s = load_split(cfg, seed);
      const auto dir = cell_dir(cfg, kind, nr, seed);
      if (!quiet) std::cerr << "[" << to_string(stage) << "] " << setting_name(kind) << " nr=" << num(nr) << " seed " << seed << std::endl;
      switch (stage) {
        case Stage::Corrupt: stage_corrupt(s, kind, nr, seed, dir); break;
        case Stage::TrainBase: stage_train_base(cfg, s, seed, dir); break;
        case Stage::TrainLsnpc:
          for (const auto& v : variants) stage_train_lsnpc(cfg, s, v, seed, dir);
          break;
        case Stage::Correct: stage_correct(cfg, s, variants, seed, dir); break;
        case Stage::Evaluate: {
          auto r = stage_evaluate(cfg, s, variants, kind, nr, seed, dir);
          runs.insert(runs.end(), r.begin(), r.end());
          break;
        }
        case Stage::GenerateData: break;
      }
    });
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(to_string(stage), e.what());
  }
  if (stage == Stage::Evaluate) {
    const auto report = build_report(runs);
    io::write_text((fs::path(cfg.output_dir) / "report.csv").string(), report_csv(report));
    io::write_text((fs::path(cfg.output_dir) / "report.txt").string(), report_text(report));
  }
  return runs;
}

}  // namespace

void run_stage(const ExperimentConfig& cfg, Stage stage, const std::vector<Variant>& variants, bool quiet) {
  cfg.validate();
  run_stage_collect(cfg, stage, variants, quiet);
  write_manifest(cfg);
}

std::string write_manifest(const ExperimentConfig& cfg) {
  const fs::path root(cfg.output_dir);
  std::ostringstream os;
  os << "config_sha256 " << sha256_hex(cfg.canonical()) << '\n';
  if (!cfg.data_path.empty()) os << "data_sha256 " << sha256_file(cfg.data_path) << '\n';
  std::vector<std::string> files;
  if (fs::exists(root))
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) {
        auto rel = fs::relative(e.path(), root).generic_string();
        if (rel != "manifest.txt") files.push_back(rel);
      }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) os << sha256_file((root / f).string()) << "  " << f << '\n';
  fs::create_directories(root);
  io::write_text((root / "manifest.txt").string(), os.str());
  return os.str();
}

RunArtifacts run_variants(const ExperimentConfig& cfg, const std::vector<Variant>& variants, bool quiet) {
  cfg.validate();
  std::set<std::string> tags;
  for (const auto& v : variants)
    if (!tags.insert(v.tag).second) throw ConfigError("duplicate variant tag: " + v.tag);
  RunArtifacts out;
  out.root = cfg.output_dir;
  for (auto st : {Stage::GenerateData, Stage::Corrupt, Stage::TrainBase, Stage::TrainLsnpc, Stage::Correct})
    run_stage_collect(cfg, st, variants, quiet);
  out.runs = run_stage_collect(cfg, Stage::Evaluate, variants, quiet);
  out.report = build_report(out.runs);
  out.manifest = write_manifest(cfg);
  return out;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, bool quiet) {
  return run_variants(cfg, default_variants(cfg), quiet);
}

RunArtifacts sweep_sensitivity(const ExperimentConfig& cfg, const std::vector<double>& nu0_values,
                               const std::vector<std::string>& nu_values, bool quiet) {
  if (nu0_values.empty() || nu_values.empty()) throw ConfigError("sweep: empty value list");
  std::vector<Variant> variants;
  for (double nu0 : nu0_values) {
    if (!(nu0 > 2)) throw ConfigError("sweep: nu0 must exceed 2, got " + num(nu0));
    for (const auto& nu : nu_values) {
      Variant v{"sweep_nu0_" + num(nu0) + "_nu_" + nu, "nu0=" + num(nu0) + " nu=" + nu, cfg.model,
                Paradigm::Unsupervised};
      v.model.proposal = ProposalFamily::Student;
      v.model.nu0 = nu0;
      if (nu == "learned") {
        v.model.nu_mode = NuMode::Learned;
      } else {
        double value = 0;
        try {
          value = parse_double(nu);
        } catch (const std::exception&) {
          throw ConfigError("sweep: nu value '" + nu + "' is neither a number nor 'learned'");
        }
        if (!(value > 2)) throw ConfigError("sweep: nu must exceed 2, got " + nu);
        v.model.nu_mode = NuMode::Fixed;
        v.model.nu = value;
      }
      variants.push_back(v);
    }
  }
  ExperimentConfig c = cfg;
  c.output_dir = (fs::path(cfg.output_dir) / "sweep").string();
  return run_variants(c, variants, quiet);
}

RunArtifacts run_ablation(const ExperimentConfig& cfg, bool quiet) {
  Variant student{"lsnpc", "LSNPC", cfg.model, cfg.paradigms.front()};
  student.model.proposal = ProposalFamily::Student;
  Variant gauss{"gauss", "GAUSS", cfg.model, cfg.paradigms.front()};
  gauss.model.proposal = ProposalFamily::Normal;
  gauss.model.nu_mode = NuMode::Fixed;
  ExperimentConfig c = cfg;
  c.output_dir = (fs::path(cfg.output_dir) / "ablation").string();
  return run_variants(c, {student, gauss}, quiet);
}

std::vector<Theorem1Result> theorem1_instances(const TheoryConfig& cfg, std::vector<std::string>* errors) {
  std::vector<Theorem1Result> out;
  for (std::size_t i = 0; i < cfg.theorem1_instances; ++i) {
    ModelConfig mc;
    mc.d = cfg.tiny_d;
    mc.k = 2;
    mc.m = 1;
    mc.nu = mc.nu0 = cfg.tiny_nu;
    mc.hidden = mc.label_hidden = mc.label_embedding = cfg.tiny_hidden;
    const auto seed = derive_seed(cfg.seed, streams::kTheory, i);
    LsnpcModel model(mc, seed);
    Rng rng = make_rng(seed, streams::kTheory, 1);
    std::vector<double> x(mc.d);
    fill_normal(rng, x);
    std::vector<std::uint8_t> yhat(mc.k);
    for (auto& b : yhat) b = static_cast<std::uint8_t>(rng() & 1u);
    try {
      out.push_back(verify_theorem1(model, x, yhat, cfg.grid, cfg.hermite_order));
    } catch (const std::exception& e) {
      if (!errors) throw;
      errors->push_back("instance " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::string TheoryReport::text() const {
  std::ostringstream os;
  os << verification_text(rows) << std::setprecision(10);
  os << "\n[theorem1] lhs, rhs, proposal entropy per instance\n";
  for (std::size_t i = 0; i < theorem1.size(); ++i)
    os << "  " << i << ": " << theorem1[i].lhs << ' ' << theorem1[i].rhs << ' ' << theorem1[i].proposal_entropy
       << (theorem1[i].entropy_nonnegative() ? "" : "  (negative entropy, reported only)") << '\n';
  for (const auto& e : theorem1_errors) os << "  error " << e << '\n';
  auto consts = [&](const char* name, const BoundConstants& c) {
    os << '[' << name << "] M=" << c.M << " L=" << c.L << " lambda=" << c.lambda << " evaluations=" << c.evaluations << '\n';
    for (const auto& w : c.warnings) os << "  warning: " << w << '\n';
  };
  os << '\n';
  consts("student constants, inflated", student_constants);
  consts("gauss constants, inflated", gauss_constants);
  os << "[theorem2] alpha=" << student_bound.alpha << " C1=" << student_bound.c1 << " C2=" << student_bound.c2
     << " max SE/bound=" << max_relative_se << '\n';
  os << "[gaussian] fitted Delta exponent=" << gaussian_exponent << '\n';
  os << "[amortization]\n";
  for (const auto& [k, r] : amortization)
    os << "  k=" << k << " KL=" << r.kl << " per disagreeing label=" << r.per_disagreeing_label
       << " per dimension=" << r.per_dimension << '\n';
  return os.str();
}

TheoryReport verify_all(const ExperimentConfig& cfg, bool quiet) {
  cfg.validate();
  const auto& tc = cfg.theory;
  TheoryReport rep;
  auto log = [&](const std::string& s) {
    if (!quiet) std::cerr << "[verify-theory] " << s << std::endl;
  };

  log("theorem 1 quadrature");
  const auto t0 = std::chrono::steady_clock::now();
  rep.theorem1 = theorem1_instances(tc, &rep.theorem1_errors);
  rep.theorem1_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    CheckRow row{"theorem1_quadrature", 0, 0, std::numeric_limits<double>::infinity(), ""};
    std::size_t negative = 0, entropy_form = 0;
    for (const auto& r : rep.theorem1) {
      entropy_form += r.lhs - r.proposal_entropy <= r.rhs + tc.theorem1_tolerance;
      if (!r.entropy_nonnegative()) {
        ++negative;
        continue;
      }
      ++row.instances;
      const double margin = r.rhs + tc.theorem1_tolerance - r.lhs;
      row.passed += margin >= 0;
      row.worst_margin = std::min(row.worst_margin, margin);
    }
    row.instances += rep.theorem1_errors.size();
    row.note = std::to_string(negative) + " negative-entropy instances reported; " +
               std::to_string(rep.theorem1_errors.size()) + " grid errors; lhs - H(q) <= rhs holds in " +
               std::to_string(entropy_form) + "/" + std::to_string(rep.theorem1.size());
    rep.rows.push_back(row);
  }

  // Trained Student (nu = nu0) and Normal models on one noisy cell.
  log("training models for the bound checks");
  ExperimentConfig c = cfg;
  c.output_dir = (fs::path(cfg.output_dir) / "theory").string();
  c.seeds = {tc.seed};
  c.noise_kinds = {tc.noise_kind};
  c.noise_rates = {tc.noise_rate};
  c.paradigms = {Paradigm::Unsupervised};
  c.lsnpc.epochs = tc.train_epochs;
  c.lsnpc.clean_epochs = std::min(c.lsnpc.clean_epochs, tc.train_epochs);
  Variant student{"student", "LSNPC", cfg.model, Paradigm::Unsupervised};
  student.model.proposal = ProposalFamily::Student;
  student.model.nu_mode = NuMode::Fixed;
  student.model.nu = student.model.nu0 = tc.nu;
  Variant gauss{"gauss", "GAUSS", cfg.model, Paradigm::Unsupervised};
  gauss.model.proposal = ProposalFamily::Normal;
  gauss.model.nu_mode = NuMode::Fixed;
  gauss.model.nu0 = tc.nu;
  for (auto st : {Stage::GenerateData, Stage::Corrupt, Stage::TrainBase, Stage::TrainLsnpc})
    run_stage_collect(c, st, {student, gauss}, quiet);

  const auto dir = cell_dir(c, tc.noise_kind, tc.noise_rate, tc.seed);
  const auto s = load_split(c, tc.seed);
  const auto m_student = load_model((dir / "student.ckpt").string());
  const auto m_gauss = load_model((dir / "gauss.ckpt").string());
  std::vector<std::size_t> rows(s.test.begin(), s.test.begin() + static_cast<std::ptrdiff_t>(std::min(tc.sample_rows, s.test.size())));
  const auto xs = s.ds.x.select_rows(rows);
  Rng rng = make_rng(tc.seed, streams::kTheory, 1ULL << 40);
  const auto pairs = random_label_pairs(read_labels(dir / "noisy_train.csv"), tc.pairs, s.ds.k(), rng);

  log("estimating constants");
  rep.student_constants = estimate_constants(m_student, xs, pairs).inflated(tc.inflation);
  rep.gauss_constants = estimate_constants(m_gauss, xs, pairs).inflated(tc.inflation);
  {
    const bool ok = rep.student_constants.warnings.empty() && rep.gauss_constants.warnings.empty();
    std::ostringstream note;
    note << std::setprecision(6) << "student M=" << rep.student_constants.M << " L=" << rep.student_constants.L
         << " lambda=" << rep.student_constants.lambda << "; gauss M=" << rep.gauss_constants.M
         << " L=" << rep.gauss_constants.L << " lambda=" << rep.gauss_constants.lambda << " (x" << tc.inflation << ")";
    rep.rows.push_back({"bound_constants", 2, ok ? 2u : 0u, std::min(rep.student_constants.lambda, rep.gauss_constants.lambda),
                        note.str()});
  }

  log("student KL bound");
  rep.student_bound = theorem2_constants(m_student.config().m, tc.nu, rep.student_constants);
  rep.theorem2 = theorem2_check(m_student, xs, pairs, rep.student_constants, tc.mc_samples, tc.seed);
  {
    CheckRow row{"theorem2_student_bound", rep.theorem2.size(), 0, std::numeric_limits<double>::infinity(), ""};
    for (const auto& r : rep.theorem2) {
      row.passed += r.holds();
      row.worst_margin = std::min(row.worst_margin, r.bound - r.kl);
      rep.max_relative_se = std::max(rep.max_relative_se, r.std_error / std::abs(r.bound));
    }
    std::ostringstream note;
    note << std::setprecision(4) << "max MC SE / bound = " << rep.max_relative_se;
    row.note = note.str();
    rep.rows.push_back(row);
  }

  log("gaussian corollary");
  rep.gaussian = gaussian_bound_check(m_gauss, xs, pairs, rep.gauss_constants);
  rep.gaussian_exponent = fit_delta_exponent(rep.gaussian);
  {
    CheckRow row{"gaussian_corollary", rep.gaussian.size(), 0, std::numeric_limits<double>::infinity(), ""};
    for (const auto& r : rep.gaussian) {
      row.passed += r.holds();
      row.worst_margin = std::min(row.worst_margin, r.bound - r.kl);
    }
    std::ostringstream note;
    note << std::setprecision(4) << "fitted Delta exponent = " << rep.gaussian_exponent << " (limit " << tc.max_exponent << ")";
    row.note = note.str();
    rep.rows.push_back(row);
  }

  log("amortization");
  {
    CheckRow row{"bernoulli_amortization", tc.amortization_k.size(), 0, 0, ""};
    for (auto k : tc.amortization_k)
      rep.amortization.emplace_back(k, amortization_demo(k, tc.amortization_matched, tc.amortization_a, tc.amortization_b,
                                                         tc.amortization_positives));
    if (!rep.amortization.empty()) {
      const double ref = rep.amortization.front().second.kl;
      for (const auto& [k, r] : rep.amortization) {
        const double dev = std::abs(r.kl - ref);
        row.passed += dev <= 1e-12;
        row.worst_margin = std::max(row.worst_margin, dev);
      }
      std::ostringstream note;
      note << std::setprecision(10) << "KL = " << ref << " for every k";
      row.note = note.str();
    }
    rep.rows.push_back(row);
  }

  io::write_text((fs::path(c.output_dir) / "verification.txt").string(), rep.text());
  io::write_text((fs::path(c.output_dir) / "verification.csv").string(), verification_csv(rep.rows));
  write_manifest(cfg);
  return rep;
}

}  // namespace lsnpc
