#include "lsnpc/dataset.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/rng.hpp"

namespace lsnpc {

namespace {

std::string fmt_double(double v) { return io::shortest(v); }

std::string encode_metadata(const FeatureDataset& ds) {
  std::string text;
  for (const auto& [key, value] : ds.metadata) {
    if (key == "splits") continue;
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
      throw std::invalid_argument("metadata entries may not contain '=' in keys or newlines");
    text += key + "=" + value + "\n";
  }
  if (!ds.splits.empty()) {
    text += "splits=";
    for (auto t : ds.splits) text += static_cast<char>(t);
    text += "\n";
  }
  return text;
}

}  // namespace

void FeatureDataset::validate() const {
  if (x.rows() == 0 || x.cols() == 0 || y.cols() == 0) throw std::invalid_argument("dataset: n, d and k must be > 0");
  if (x.rows() != y.rows()) throw std::invalid_argument("dataset: X and Y row counts differ");
  for (float v : x.data())
    if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature value");
  for (auto v : y.data())
    if (v > 1) throw std::invalid_argument("dataset: labels must be binary");
  if (!splits.empty() && splits.size() != x.rows()) throw std::invalid_argument("dataset: split tag count mismatch");
}

FeatureDataset generate_synthetic(const GeneratorConfig& cfg, SyntheticTruth* truth) {
  if (cfg.n == 0 || cfg.d == 0 || cfg.k == 0 || cfg.rank == 0)
    throw std::invalid_argument("generator: n, d, k and rank must be positive");
  if (cfg.rank > std::min(cfg.d, cfg.k) && !cfg.identity_embedding)
    throw std::invalid_argument("generator: rank must not exceed min(d, k)");
  if (cfg.identity_embedding && cfg.rank != cfg.d) throw std::invalid_argument("generator: identity embedding needs rank == d");
  if (!(cfg.feature_noise >= 0)) throw std::invalid_argument("generator: feature noise must be non-negative");

  Rng rng = make_rng(cfg.seed, streams::kGenerate);
  std::normal_distribution<double> normal(0.0, 1.0);

  ProbMatrix w(cfg.k, cfg.rank);
  for (auto& v : w.data()) v = normal(rng);
  std::vector<double> b(cfg.k);
  for (std::size_t i = 0; i < cfg.k; ++i) {
    const double pos = cfg.k > 1 ? static_cast<double>(i) / static_cast<double>(cfg.k - 1) - 0.5 : 0.0;
    b[i] = -(cfg.label_offset + cfg.offset_spread * pos);
  }
  ProbMatrix a(cfg.d, cfg.rank);
  if (cfg.identity_embedding) {
    for (std::size_t j = 0; j < cfg.d; ++j) a(j, j) = 1.0;
  } else {
    for (auto& v : a.data()) v = normal(rng);
  }

  FeatureDataset ds;
  ds.x = FeatureMatrix(cfg.n, cfg.d);
  ds.y = LabelMatrix(cfg.n, cfg.k);
  std::vector<double> u(cfg.rank);
  for (std::size_t r = 0; r < cfg.n; ++r) {
    for (auto& v : u) v = normal(rng);
    for (std::size_t i = 0; i < cfg.k; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < cfg.rank; ++j) s += w(i, j) * u[j];
      ds.y(r, i) = 1.0 / (1.0 + std::exp(-s)) > 0.5 ? 1 : 0;
    }
    for (std::size_t f = 0; f < cfg.d; ++f) {
      double s = 0;
      for (std::size_t j = 0; j < cfg.rank; ++j) s += a(f, j) * u[j];
      ds.x(r, f) = static_cast<float>(s + cfg.feature_noise * normal(rng));
    }
  }
  ds.metadata = {{"generator", "latent-factor"},
                 {"n", std::to_string(cfg.n)},
                 {"d", std::to_string(cfg.d)},
                 {"k", std::to_string(cfg.k)},
                 {"rank", std::to_string(cfg.rank)},
                 {"feature_noise", fmt_double(cfg.feature_noise)},
                 {"label_offset", fmt_double(cfg.label_offset)},
                 {"offset_spread", fmt_double(cfg.offset_spread)},
                 {"identity_embedding", cfg.identity_embedding ? "1" : "0"},
                 {"seed", std::to_string(cfg.seed)}};
  if (truth) *truth = SyntheticTruth{std::move(w), std::move(b), std::move(a)};
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const FeatureDataset& ds) {
  ds.validate();
  io::ByteWriter w;
  w.bytes("LSDS", 4);
  w.u8(kDatasetVersion);
  w.u64(ds.n());
  w.u64(ds.d());
  w.u64(ds.k());
  w.str(encode_metadata(ds));
  for (float v : ds.x.data()) w.f32(v);
  std::vector<std::uint8_t> bits((ds.n() * ds.k() + 7) / 8, 0);
  for (std::size_t i = 0; i < ds.y.data().size(); ++i)
    if (ds.y.data()[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  w.bytes(bits.data(), bits.size());
  return w.buffer();
}

FeatureDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "dataset");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "LSDS", 4) != 0) throw std::runtime_error("dataset: bad magic");
  const auto version = r.u8();
  if (version != kDatasetVersion) throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
  const auto n = r.u64(), d = r.u64(), k = r.u64();
  if (n == 0 || d == 0 || k == 0 || n > (1ull << 32) || d > (1ull << 20) || k > (1ull << 20))
    throw std::runtime_error("dataset: implausible dimensions");
  const std::string meta = r.str();
  const std::size_t need = 4 * n * d + (n * k + 7) / 8;
  if (r.remaining() != need)
    throw std::runtime_error("dataset: payload size " + std::to_string(r.remaining()) + " does not match header (" +
                             std::to_string(need) + ")");

  FeatureDataset ds;
  std::istringstream ms(meta);
  for (std::string line; std::getline(ms, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("dataset: malformed metadata line");
    auto key = line.substr(0, eq);
    auto value = line.substr(eq + 1);
    if (key == "splits") {
      if (value.size() != n) throw std::runtime_error("dataset: split tag count mismatch");
      for (char c : value) ds.splits.push_back(static_cast<SplitTag>(c));
    } else {
      ds.metadata.emplace(std::move(key), std::move(value));
    }
  }
  ds.x = FeatureMatrix(n, d);
  for (auto& v : ds.x.data()) v = r.f32();
  std::vector<std::uint8_t> bits((n * k + 7) / 8);
  r.bytes(bits.data(), bits.size());
  ds.y = LabelMatrix(n, k);
  for (std::size_t i = 0; i < n * k; ++i) ds.y.data()[i] = (bits[i / 8] >> (i % 8)) & 1u;
  ds.validate();
  return ds;
}

void save_dataset(const FeatureDataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

FeatureDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

FeatureDataset import_csv(const std::string& text, std::size_t k) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header row");
  const std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (k == 0 || columns <= k) throw std::runtime_error("csv: need at least one feature column and k label columns");
  const std::size_t d = columns - k;
  std::vector<float> xs;
  std::vector<std::uint8_t> ys;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ls, cell, ',')) {
      if (c < d) {
        xs.push_back(std::stof(cell));
      } else {
        if (cell != "0" && cell != "1")
          throw std::runtime_error("csv: row " + std::to_string(n + 1) + " has non-binary label '" + cell + "'");
        ys.push_back(cell == "1" ? 1 : 0);
      }
      ++c;
    }
    if (c != columns) throw std::runtime_error("csv: row " + std::to_string(n + 1) + " has " + std::to_string(c) +
                                               " columns, expected " + std::to_string(columns));
    ++n;
  }
  FeatureDataset ds;
  ds.x = FeatureMatrix(n, d, std::move(xs));
  ds.y = LabelMatrix(n, k, std::move(ys));
  ds.metadata = {{"source", "csv"}};
  ds.validate();
  return ds;
}

}  // namespace lsnpc
