#include "lsnpc/theory.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lsnpc/distributions.hpp"
#include "lsnpc/special.hpp"

namespace lsnpc {

void QuadratureGrid::validate() const {
  if (!(step > 0)) throw std::invalid_argument("quadrature grid: step must be positive");
  if (!(hi > lo)) throw std::invalid_argument("quadrature grid: empty range");
}

std::size_t QuadratureGrid::size() const {
  validate();
  return static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
}

std::vector<double> QuadratureGrid::axis() const {
  std::vector<double> a(size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = lo + step * static_cast<double>(i);
  return a;
}

namespace {

double logsumexp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double student_1d(double x, double mean, double scale, double nu) {
  const double u = (x - mean) / scale;
  return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * kPi) - std::log(scale) -
         0.5 * (nu + 1) * std::log1p(u * u / nu);
}

double normal_1d(double x, double mean, double scale) {
  const double u = (x - mean) / scale;
  return -0.5 * kLog2Pi - std::log(scale) - 0.5 * u * u;
}

Tensor column(const std::vector<double>& v) { return Tensor(Shape{v.size(), 1}, v); }

}  // namespace

GaussHermite gauss_hermite(std::size_t order) {
  if (order == 0) throw std::invalid_argument("gauss_hermite: order must be positive");
  // Newton iteration on orthonormal Hermite polynomials (physicists' weight exp(-x^2)).
  const double pim4 = 0.7511255444649425;
  const int n = static_cast<int>(order);
  std::vector<double> x(order), w(order);
  double z = 0;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0) z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    else if (i == 1) z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2) z = 1.86 * z - 0.86 * x[0];
    else if (i == 3) z = 1.91 * z - 0.91 * x[1];
    else z = 2.0 * z - x[i - 2];
    double pp = 0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-14) break;
    }
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / (pp * pp);
  }
  GaussHermite gh;
  for (int i = n - 1; i >= 0; --i) {
    gh.nodes.push_back(std::numbers::sqrt2 * x[i]);
    gh.weights.push_back(w[i] / std::sqrt(kPi));
  }
  return gh;
}

namespace {

// Contributions below this proposal mass per cell are dropped.
constexpr double kNegligibleMass = 1e-14;

}  // namespace

Theorem1Tables theorem1_tables(const LsnpcModel& model, std::span<const double> x, std::span<const std::uint8_t> yhat,
                               const QuadratureGrid& grid, std::size_t order) {
  const auto& cfg = model.config();
  if (cfg.m != 1) throw std::invalid_argument("theorem 1 quadrature supports latent dimension 1 only");
  if (x.size() != cfg.d || yhat.size() != cfg.k) throw std::invalid_argument("theorem 1: input dimensions differ from model");
  Theorem1Tables t;
  t.axis = grid.axis();
  t.step = grid.step;
  t.order = order;
  const auto gh = gauss_hermite(order);
  t.weights = gh.weights;
  const std::size_t n = t.n(), G = order;
  const double h = t.step, log_h = std::log(h);

  Tensor xt(Shape{1, cfg.d}), yt(Shape{1, cfg.k});
  for (std::size_t c = 0; c < cfg.d; ++c) xt(0, c) = x[c];
  for (std::size_t c = 0; c < cfg.k; ++c) yt(0, c) = yhat[c];
  const LatentParams q = model.encode_xy(xt, yt);
  const double mu = q.mean(0, 0), sigma = q.scale(0, 0);
  const bool student = cfg.proposal == ProposalFamily::Student;
  const double nu = student && cfg.nu_mode == NuMode::Learned ? model.learned_nu(xt, yt)(0, 0) : cfg.nu;
  t.proposal_entropy = student ? entropy_diag_student({{mu}, {sigma}, nu}) : entropy_diag_normal({{mu}, {sigma}});

  t.log_q_zhat.resize(n);
  double mass = 0;
  for (std::size_t j = 0; j < n; ++j) {
    t.log_q_zhat[j] = student ? student_1d(t.axis[j], mu, sigma, nu) : normal_1d(t.axis[j], mu, sigma);
    mass += std::exp(t.log_q_zhat[j]) * h;
  }
  if (std::abs(mass - 1.0) > 1e-3) {
    std::ostringstream os;
    os << "quadrature grid too narrow or coarse: q(zhat) mass on the grid is " << mass;
    throw std::runtime_error(os.str());
  }

  const Tensor grid_col = column(t.axis);
  Tensor xrep(Shape{n, cfg.d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cfg.d; ++c) xrep(r, c) = x[c];
  const Tensor probs = model.decode_labels(xrep, grid_col);
  std::vector<double> log_lik(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0;
    for (std::size_t c = 0; c < cfg.k; ++c) s += yhat[c] ? std::log(probs(j, c)) : std::log(1.0 - probs(j, c));
    log_lik[j] = s;
  }

  const double nu0 = cfg.nu0;
  const double st_const = std::lgamma(0.5 * (nu0 + 1)) - std::lgamma(0.5 * nu0) - 0.5 * std::log(nu0 * kPi);
  auto log_shift = [&](double zhat, double shift) {
    const double u = zhat - shift;
    return st_const - 0.5 * (nu0 + 1) * std::log1p(u * u / nu0);
  };
  // log of  integral over zhat of p(zhat | z) p(yhat | x, zhat)  for a given shift g_psi(z).
  std::vector<double> buf(n);
  auto log_marginal_lik = [&](double shift) {
    for (std::size_t j = 0; j < n; ++j) buf[j] = log_shift(t.axis[j], shift) + log_lik[j];
    return logsumexp(buf) + log_h;
  };

  // Evidence over the (z, zhat) grid.
  const Tensor grid_shift = model.decode_shift(grid_col);
  std::vector<double> per_z(n);
  for (std::size_t i = 0; i < n; ++i) per_z[i] = normal_1d(t.axis[i], 0.0, 1.0) + log_marginal_lik(grid_shift(i, 0));
  t.log_evidence = logsumexp(per_z) + log_h;

  // Gauss-Hermite nodes on q(z | zhat_j) for the zhat cells that carry mass.
  const LatentParams qz = model.encode_zhat_to_z(grid_col);
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < n; ++j)
    if (std::exp(t.log_q_zhat[j]) * h > kNegligibleMass) active.push_back(j);
  Tensor nodes(Shape{active.size() * G, 1});
  for (std::size_t a = 0; a < active.size(); ++a)
    for (std::size_t i = 0; i < G; ++i)
      nodes(a * G + i, 0) = qz.mean(active[a], 0) + qz.scale(active[a], 0) * gh.nodes[i];
  const Tensor node_shift = model.decode_shift(nodes);

  t.log_q_z.assign(n * G, 0.0);
  t.log_posterior.assign(n * G, 0.0);
  t.log_posterior_z.assign(n * G, 0.0);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t j = active[a];
    for (std::size_t i = 0; i < G; ++i) {
      const double z = nodes(a * G + i, 0), shift = node_shift(a * G + i, 0);
      const double log_pz = normal_1d(z, 0.0, 1.0);
      t.log_q_z[j * G + i] = normal_1d(z, qz.mean(j, 0), qz.scale(j, 0));
      t.log_posterior[j * G + i] = log_pz + log_shift(t.axis[j], shift) + log_lik[j] - t.log_evidence;
      t.log_posterior_z[j * G + i] = log_pz + log_marginal_lik(shift) - t.log_evidence;
    }
  }
  return t;
}

Theorem1Result evaluate_theorem1(const Theorem1Tables& t) {
  const std::size_t n = t.n(), G = t.order;
  Theorem1Result r;
  r.proposal_entropy = t.proposal_entropy;
  for (std::size_t j = 0; j < n; ++j) {
    const double qj = std::exp(t.log_q_zhat[j]) * t.step;
    if (qj <= kNegligibleMass) continue;
    double inner_lhs = 0, inner_rhs = 0;
    for (std::size_t i = 0; i < G; ++i) {
      const double lq = t.log_q_z[j * G + i];
      inner_lhs += t.weights[i] * (lq - t.log_posterior_z[j * G + i]);
      inner_rhs += t.weights[i] * (lq - t.log_posterior[j * G + i]);
    }
    r.lhs += qj * inner_lhs;
    r.rhs += qj * (t.log_q_zhat[j] + inner_rhs);
  }
  return r;
}

Theorem1Result verify_theorem1(const LsnpcModel& model, std::span<const double> x,
                               std::span<const std::uint8_t> yhat, const QuadratureGrid& grid, std::size_t order) {
  return evaluate_theorem1(theorem1_tables(model, x, yhat, grid, order));
}

std::size_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("hamming: length mismatch");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != 0) != (b[i] != 0) ? 1 : 0;
  return d;
}

namespace {

LabelPair flip_pair(const LabelMatrix& labels, std::size_t delta, Rng& rng) {
  const std::size_t k = labels.cols();
  if (delta == 0 || delta > k) throw std::invalid_argument("label pairs: distance must lie in [1, k]");
  std::uniform_int_distribution<std::size_t> row(0, labels.rows() - 1);
  auto src = labels.row(row(rng));
  LabelPair p{LabelVector(src.begin(), src.end()), {}};
  p.y1 = p.y0;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < delta; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, k - 1);
    std::swap(idx[i], idx[pick(rng)]);
    p.y1[idx[i]] ^= 1u;
  }
  return p;
}

}  // namespace

std::vector<LabelPair> random_label_pairs(const LabelMatrix& labels, std::size_t count, std::size_t max_delta, Rng& rng) {
  if (labels.rows() == 0) throw std::invalid_argument("label pairs: no source rows");
  std::vector<LabelPair> out;
  std::uniform_int_distribution<std::size_t> dist(1, std::min(max_delta, labels.cols()));
  for (std::size_t i = 0; i < count; ++i) out.push_back(flip_pair(labels, dist(rng), rng));
  return out;
}

std::vector<LabelPair> controlled_label_pairs(const LabelMatrix& labels, std::size_t per_delta,
                                              std::span<const std::size_t> deltas, Rng& rng) {
  if (labels.rows() == 0) throw std::invalid_argument("label pairs: no source rows");
  std::vector<LabelPair> out;
  for (std::size_t d : deltas)
    for (std::size_t i = 0; i < per_delta; ++i) out.push_back(flip_pair(labels, d, rng));
  return out;
}

BoundConstants BoundConstants::inflated(double factor) const {
  BoundConstants c = *this;
  c.M *= factor;
  c.L *= factor;
  c.lambda /= factor;
  return c;
}

namespace {

struct PairEncodings {
  LatentParams q0, q1;
  Tensor nu0, nu1;  // learned mode only
};

// Row r = pair p * n + sample s when all_combinations, else row p with sample p mod n.
PairEncodings encode_pairs(const LsnpcModel& model, const FeatureMatrix& x, const std::vector<LabelPair>& pairs,
                           bool all_combinations) {
  const auto& cfg = model.config();
  if (x.rows() == 0 || pairs.empty()) throw std::invalid_argument("bound check: empty sample");
  if (x.cols() != cfg.d) throw std::invalid_argument("bound check: feature dimension differs from model");
  const std::size_t n = x.rows(), rows = all_combinations ? pairs.size() * n : pairs.size();
  Tensor xt(Shape{rows, cfg.d}), y0(Shape{rows, cfg.k}), y1(Shape{rows, cfg.k});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t p = all_combinations ? r / n : r, s = all_combinations ? r % n : r % n;
    const auto& pair = pairs[p];
    if (pair.y0.size() != cfg.k || pair.y1.size() != cfg.k) throw std::invalid_argument("bound check: label length differs from k");
    auto xr = x.row(s);
    for (std::size_t c = 0; c < cfg.d; ++c) xt(r, c) = xr[c];
    for (std::size_t c = 0; c < cfg.k; ++c) {
      y0(r, c) = pair.y0[c];
      y1(r, c) = pair.y1[c];
    }
  }
  PairEncodings e{model.encode_xy(xt, y0), model.encode_xy(xt, y1), {}, {}};
  if (cfg.proposal == ProposalFamily::Student && cfg.nu_mode == NuMode::Learned) {
    e.nu0 = model.learned_nu(xt, y0);
    e.nu1 = model.learned_nu(xt, y1);
  }
  return e;
}

}  // namespace

BoundConstants estimate_constants(const LsnpcModel& model, const FeatureMatrix& x_sample,
                                  const std::vector<LabelPair>& pairs) {
  const auto enc = encode_pairs(model, x_sample, pairs, true);
  const std::size_t n = x_sample.rows(), m = model.config().m;
  BoundConstants c;
  c.lambda = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < enc.q0.mean.rows(); ++r) {
    const auto& pair = pairs[r / n];
    const double delta = static_cast<double>(hamming(pair.y0, pair.y1));
    if (delta < 1) throw std::invalid_argument("estimate_constants: every pair needs Hamming distance >= 1");
    double ratio = 0, dmu = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double v0 = enc.q0.scale(r, j) * enc.q0.scale(r, j), v1 = enc.q1.scale(r, j) * enc.q1.scale(r, j);
      ratio = std::max({ratio, v0 / v1, v1 / v0});
      dmu = std::max(dmu, std::abs(enc.q0.mean(r, j) - enc.q1.mean(r, j)));
      c.lambda = std::min({c.lambda, v0, v1});
    }
    c.M = std::max(c.M, ratio / delta);
    c.L = std::max(c.L, dmu / delta);
    ++c.evaluations;
  }
  if (c.L <= 0) {
    c.L = std::numeric_limits<double>::epsilon();
    c.warnings.push_back("mean encoder is constant over the sampled pairs; L replaced by machine epsilon");
  }
  return c;
}

StudentBound theorem2_constants(std::size_t m, double nu, const BoundConstants& k) {
  if (!(nu > 2)) throw std::invalid_argument("theorem 2 bound requires nu > 2");
  if (!(k.M > 0 && k.L > 0 && k.lambda > 0)) throw std::invalid_argument("theorem 2 bound requires positive M, L, lambda");
  const double md = static_cast<double>(m), rm = std::sqrt(md);
  StudentBound b;
  b.alpha = std::sqrt(nu * k.lambda) / k.L;
  b.c1 = 0.5 * (nu + md) * (k.M * rm * b.alpha / (2.0 * (nu - 2.0)) - digamma(0.5 * (nu + md)) + digamma(0.5 * nu));
  b.c2 = md * k.M / (2.0 * std::numbers::e) + (nu + md) * rm / (2.0 * b.alpha);
  return b;
}

double theorem2_bound(std::size_t m, double nu, const BoundConstants& constants, double delta) {
  if (!(delta >= 1)) throw std::invalid_argument("theorem 2 bound is stated for Delta >= 1");
  return theorem2_constants(m, nu, constants).at(delta);
}

McEstimate mc_kl_student(const DiagStudentParams& p, const DiagStudentParams& q, std::size_t samples, Rng& rng) {
  if (samples < 2) throw std::invalid_argument("mc_kl_student: need at least two samples");
  const std::size_t m = p.dim();
  std::vector<double> eps(m), chi(1), z;
  double s = 0, ss = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    fill_normal(rng, eps);
    chi[0] = draw_chi_squared(rng, p.dof);
    z = rsample_diag_student(p, eps, chi);
    const double v = logpdf_diag_student(z, p) - logpdf_diag_student(z, q);
    s += v;
    ss += v * v;
  }
  const double nd = static_cast<double>(samples), mean = s / nd;
  const double var = std::max(0.0, (ss - nd * mean * mean) / (nd - 1));
  return {mean, std::sqrt(var / nd)};
}

namespace {

DiagStudentParams student_row(const LatentParams& q, std::size_t r, double nu) {
  DiagStudentParams p;
  p.dof = nu;
  for (std::size_t j = 0; j < q.mean.cols(); ++j) {
    p.mean.push_back(q.mean(r, j));
    p.scale.push_back(q.scale(r, j));
  }
  return p;
}

}  // namespace

std::vector<BoundRow> theorem2_check(const LsnpcModel& model, const FeatureMatrix& x_sample,
                                     const std::vector<LabelPair>& pairs, const BoundConstants& constants,
                                     std::size_t samples, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (cfg.proposal != ProposalFamily::Student || cfg.nu_mode != NuMode::Fixed)
    throw std::invalid_argument("theorem 2 check needs a fixed-dof Student proposal");
  if (cfg.nu != cfg.nu0) throw std::invalid_argument("theorem 2 check needs nu == nu0");
  const auto enc = encode_pairs(model, x_sample, pairs, false);
  const StudentBound bound = theorem2_constants(cfg.m, cfg.nu, constants);
  std::vector<BoundRow> rows;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    Rng rng = make_rng(seed, streams::kTheory, p);
    const auto q1 = student_row(enc.q1, p, cfg.nu), q0 = student_row(enc.q0, p, cfg.nu);
    const auto est = mc_kl_student(q1, q0, samples, rng);
    BoundRow row;
    row.delta = hamming(pairs[p].y0, pairs[p].y1);
    row.kl = est.value;
    row.std_error = est.std_error;
    row.bound = bound.at(static_cast<double>(row.delta));
    rows.push_back(row);
  }
  return rows;
}

double gaussian_bound(std::size_t m, const BoundConstants& k, double delta) {
  if (!(k.lambda > 0)) throw std::invalid_argument("gaussian bound requires lambda > 0");
  const double md = static_cast<double>(m);
  return 1.5 * k.M * md * delta - 0.5 * md + md * k.L * k.L / k.lambda * delta * delta;
}

std::vector<BoundRow> gaussian_bound_check(const LsnpcModel& model_gauss, const FeatureMatrix& x_sample,
                                           const std::vector<LabelPair>& pairs, const BoundConstants& constants) {
  if (model_gauss.config().proposal != ProposalFamily::Normal)
    throw std::invalid_argument("gaussian bound check needs a Normal-proposal model");
  const auto enc = encode_pairs(model_gauss, x_sample, pairs, false);
  const std::size_t m = model_gauss.config().m;
  std::vector<BoundRow> rows;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    DiagNormalParams a, b;
    for (std::size_t j = 0; j < m; ++j) {
      a.mean.push_back(enc.q1.mean(p, j));
      a.scale.push_back(enc.q1.scale(p, j));
      b.mean.push_back(enc.q0.mean(p, j));
      b.scale.push_back(enc.q0.scale(p, j));
    }
    BoundRow row;
    row.delta = hamming(pairs[p].y0, pairs[p].y1);
    row.kl = kl_diag_normal(a, b);
    row.bound = row.delta == 0 ? 0.0 : gaussian_bound(m, constants, static_cast<double>(row.delta));
    rows.push_back(row);
  }
  return rows;
}

double fit_delta_exponent(const std::vector<BoundRow>& rows) {
  std::map<std::size_t, std::pair<double, std::size_t>> by_delta;
  for (const auto& r : rows)
    if (r.delta > 0) {
      by_delta[r.delta].first += r.kl;
      ++by_delta[r.delta].second;
    }
  std::vector<double> lx, ly;
  for (const auto& [d, acc] : by_delta) {
    const double mean = acc.first / static_cast<double>(acc.second);
    if (mean > 0) {
      lx.push_back(std::log(static_cast<double>(d)));
      ly.push_back(std::log(mean));
    }
  }
  if (lx.size() < 2) throw std::invalid_argument("fit_delta_exponent: need at least two distances with positive KL");
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n, my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

AmortizationResult amortization_demo(std::size_t k, double matched_prob, double pos_prob_a, double pos_prob_b,
                                     std::size_t n_pos) {
  if (n_pos > k) throw std::invalid_argument("amortization_demo: more positives than labels");
  if (k == 0) throw std::invalid_argument("amortization_demo: k must be positive");
  std::vector<double> a(k, matched_prob), b(k, matched_prob);
  for (std::size_t i = 0; i < n_pos; ++i) {
    a[i] = pos_prob_a;
    b[i] = pos_prob_b;
  }
  AmortizationResult r;
  r.kl = kl_mv_bernoulli(BernoulliVec(a), BernoulliVec(b));
  r.per_disagreeing_label = n_pos ? r.kl / static_cast<double>(n_pos) : 0.0;
  r.per_dimension = r.kl / static_cast<double>(k);
  return r;
}

std::string verification_text(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "check" << std::right << std::setw(10) << "instances" << std::setw(8) << "passed"
     << std::setw(16) << "worst_margin" << "  note\n";
  for (const auto& r : rows)
    os << std::left << std::setw(26) << r.name << std::right << std::setw(10) << r.instances << std::setw(8) << r.passed
       << std::setw(16) << std::setprecision(6) << r.worst_margin << "  " << r.note << '\n';
  return os.str();
}

std::string verification_csv(const std::vector<CheckRow>& rows) {
  std::ostringstream os;
  os << "check,instances,passed,worst_margin,note\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.name << ',' << r.instances << ',' << r.passed << ',' << r.worst_margin << ",\"" << r.note << "\"\n";
  return os.str();
}

}  // namespace lsnpc
