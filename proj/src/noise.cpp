#include "lsnpc/noise.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/rng.hpp"

namespace lsnpc {

std::string to_string(NoiseKind kind) { return kind == NoiseKind::Sym ? "sym" : "pair"; }

NoiseKind parse_noise_kind(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "sym") return NoiseKind::Sym;
  if (s == "pair") return NoiseKind::Pair;
  throw std::invalid_argument("unknown noise kind: " + name);
}

TransitionMatrix build_transition_matrix(NoiseKind kind, std::size_t k, double nr) {
  if (k < 2) throw std::invalid_argument("transition matrix needs k >= 2");
  if (!(nr >= 0.0 && nr < 1.0)) throw std::invalid_argument("noise rate must lie in [0, 1), got " + std::to_string(nr));
  TransitionMatrix t{k, kind, nr, std::vector<double>(k * k, 0.0)};
  for (std::size_t i = 0; i < k; ++i) {
    t.rows[i * k + i] = 1.0 - nr;
    if (kind == NoiseKind::Sym) {
      for (std::size_t j = 0; j < k; ++j)
        if (j != i) t.rows[i * k + j] = nr / static_cast<double>(k - 1);
    } else {
      t.rows[i * k + (i + 1) % k] = nr;
    }
  }
  return t;
}

LabelMatrix corrupt_labels(const LabelMatrix& labels, const TransitionMatrix& t, std::uint64_t seed) {
  if (labels.cols() != t.k) throw std::invalid_argument("corrupt_labels: label width does not match transition matrix");
  LabelMatrix out = labels;
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    Rng rng = make_rng(seed, streams::kCorrupt, r);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto src = labels.row(r);
    auto dst = out.row(r);
    for (std::size_t i = 0; i < t.k; ++i) {
      if (src[i] > 1) throw std::invalid_argument("corrupt_labels: labels must be binary");
      if (!src[i]) continue;
      const double u = unif(rng);
      double acc = 0;
      std::size_t j = t.k - 1;
      for (std::size_t c = 0; c < t.k; ++c) {
        acc += t(i, c);
        if (u < acc) {
          j = c;
          break;
        }
      }
      if (j != i) {
        dst[i] = 0;
        dst[j] = 1;
      }
    }
  }
  return out;
}

std::string format_transition_matrix(const TransitionMatrix& t) {
  std::ostringstream os;
  os << t.k << ' ' << to_string(t.kind) << ' ' << io::shortest(t.nr) << '\n';
  for (std::size_t i = 0; i < t.k; ++i) {
    for (std::size_t j = 0; j < t.k; ++j) os << (j ? " " : "") << io::shortest(t(i, j));
    os << '\n';
  }
  return os.str();
}

TransitionMatrix parse_transition_matrix(const std::string& text) {
  std::istringstream is(text);
  TransitionMatrix t;
  std::string kind;
  if (!(is >> t.k >> kind >> t.nr)) throw std::runtime_error("transition matrix: malformed header");
  t.kind = parse_noise_kind(kind);
  if (t.k < 2 || t.k > 1u << 16) throw std::runtime_error("transition matrix: bad label count");
  t.rows.resize(t.k * t.k);
  for (auto& v : t.rows)
    if (!(is >> v)) throw std::runtime_error("transition matrix: truncated rows");
  for (std::size_t i = 0; i < t.k; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < t.k; ++j) s += t(i, j);
    if (std::abs(s - 1.0) > 1e-9) throw std::runtime_error("transition matrix: row " + std::to_string(i) + " sums to " +
                                                           std::to_string(s));
  }
  return t;
}

SplitIndices split_dataset(std::size_t n, const SplitSpec& spec) {
  const double total = spec.train + spec.validation + spec.test;
  if (spec.train < 0 || spec.validation < 0 || spec.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  if (spec.clean_share < 0 || spec.clean_share > 1) throw std::invalid_argument("clean share must lie in [0, 1]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, streams::kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
  const auto n_val_total = static_cast<std::size_t>(std::floor(spec.validation * static_cast<double>(n) + 1e-9));
  const auto n_clean = static_cast<std::size_t>(std::floor(spec.clean_share * static_cast<double>(n_val_total) + 1e-9));

  SplitIndices s;
  auto it = perm.begin();
  s.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  s.clean.assign(it, it + static_cast<std::ptrdiff_t>(n_clean));
  it += static_cast<std::ptrdiff_t>(n_clean);
  s.validation.assign(it, it + static_cast<std::ptrdiff_t>(n_val_total - n_clean));
  it += static_cast<std::ptrdiff_t>(n_val_total - n_clean);
  s.test.assign(it, perm.end());
  return s;
}

}  // namespace lsnpc
