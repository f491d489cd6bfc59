#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>

#include "lsnpc/classifier.hpp"
#include "lsnpc/graph.hpp"
#include "lsnpc/theory.hpp"

namespace oracle {

using namespace lsnpc;

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t r) {
  auto s = t.row_span(r);
  return {s.begin(), s.end()};
}

void note_error(Summary& s, double err, double tol) {
  ++s.cases;
  if (!(err <= tol)) ++s.failures;
  if (std::isnan(err)) s.worst = std::numeric_limits<double>::infinity();
  else s.worst = std::max(s.worst, err);
}

}  // namespace

double f1_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  const double p = double(tp) / double(tp + fp), r = double(tp) / double(tp + fn);
  return 2 * p * r / (p + r);
}

Summary metrics_suite(std::size_t cases, std::uint64_t seed) {
  Summary s;
  s.name = "metrics vs brute-force counting";
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::uniform_real_distribution<double> unif(0, 1);
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = dim(rng), k = dim(rng);
    const double density = unif(rng), agree = unif(rng);
    LabelMatrix y(n, k), p(n, k);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) {
        y(r, j) = unif(rng) < density;
        p(r, j) = unif(rng) < agree ? y(r, j) : std::uint8_t(unif(rng) < density);
      }
    // Label-major counting, separate from the library's row-major pass.
    std::size_t TP = 0, FP = 0, FN = 0;
    double macro_perfect = 0, macro_skip = 0;
    std::size_t skip_used = 0;
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t r = 0; r < n; ++r) {
        tp += y(r, j) == 1 && p(r, j) == 1;
        fp += y(r, j) == 0 && p(r, j) == 1;
        fn += y(r, j) == 1 && p(r, j) == 0;
      }
      TP += tp;
      FP += fp;
      FN += fn;
      if (tp + fp + fn == 0) {
        macro_perfect += 1;
      } else {
        macro_perfect += f1_counts(tp, fp, fn);
        macro_skip += f1_counts(tp, fp, fn);
        ++skip_used;
      }
    }
    const double micro = f1_counts(TP, FP, FN);
    const double mp = macro_perfect / double(k), ms = skip_used ? macro_skip / double(skip_used) : 0.0;
    const double err = std::max({std::abs(micro - micro_f1(y, p)), std::abs(mp - macro_f1(y, p, VacuousLabel::Perfect)),
                                 std::abs(ms - macro_f1(y, p, VacuousLabel::Skip))});
    note_error(s, err, 1e-12);
  }
  return s;
}

double student_logpdf(const std::vector<double>& x, const std::vector<double>& mean, const std::vector<double>& scale,
                      double nu, bool shared) {
  const double m = double(x.size());
  if (shared) {
    double quad = 0, logdet = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = (x[i] - mean[i]) / scale[i];
      quad += u * u;
      logdet += std::log(scale[i]);
    }
    return std::lgamma((nu + m) / 2) - std::lgamma(nu / 2) - m / 2 * std::log(nu * std::numbers::pi) - logdet -
           (nu + m) / 2 * std::log(1 + quad / nu);
  }
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += student_logpdf({x[i]}, {mean[i]}, {scale[i]}, nu, true);
  return s;
}

double normal_logpdf(const std::vector<double>& x, const std::vector<double>& mean, const std::vector<double>& scale) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = (x[i] - mean[i]) / scale[i];
    s += -0.5 * std::log(2 * std::numbers::pi) - std::log(scale[i]) - 0.5 * u * u;
  }
  return s;
}

LossTerms straight_line_loss(const LsnpcModel& model, const Tensor& x, const Tensor* y, const Tensor& yhat,
                             const LossDraws& draws) {
  const auto& cfg = model.config();
  const std::size_t rows = x.rows(), m = cfg.m;
  const bool student = cfg.proposal == ProposalFamily::Student;
  const bool shared = cfg.coupling == StudentCoupling::Shared;
  const LatentParams q = model.encode_xy(x, yhat);
  Tensor nu_rows(Shape{rows, 1}, cfg.nu);
  if (student && cfg.nu_mode == NuMode::Learned) nu_rows = model.learned_nu(x, yhat);

  Tensor zhat(Shape{rows, m});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < m; ++c) {
      const double w = student ? draws.student_w(r, draws.student_w.cols() == 1 ? 0 : c) : 1.0;
      zhat(r, c) = q.mean(r, c) + q.scale(r, c) * draws.eps_zhat(r, c) * w;
    }
  const LatentParams qz = model.encode_zhat_to_z(zhat);
  LatentParams qzy;
  if (y) qzy = model.encode_xy(x, *y);

  Tensor z(Shape{rows, m});
  std::vector<std::vector<double>> zmean(rows), zscale(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const bool theta = y && draws.branch(r, 0) > 0.5;
    zmean[r] = theta ? row_of(qzy.mean, r) : row_of(qz.mean, r);
    zscale[r] = theta ? row_of(qzy.scale, r) : row_of(qz.scale, r);
    for (std::size_t c = 0; c < m; ++c) z(r, c) = zmean[r][c] + zscale[r][c] * (theta ? draws.eps_zy(r, c) : draws.eps_z(r, c));
  }
  const Tensor shift = model.decode_shift(z);
  const Tensor p_hat = model.decode_labels(x, zhat);
  Tensor p_y;
  if (y) p_y = model.decode_labels(x, z);

  LossTerms t;
  t.rows = rows;
  double elbo = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double lpyhat = 0, lpy = 0;
    for (std::size_t c = 0; c < cfg.k; ++c) {
      lpyhat += yhat(r, c) > 0.5 ? std::log(p_hat(r, c)) : std::log(1 - p_hat(r, c));
      if (y) lpy += (*y)(r, c) > 0.5 ? std::log(p_y(r, c)) : std::log(1 - p_y(r, c));
    }
    const auto zh = row_of(zhat, r), zr = row_of(z, r);
    const double lq_zhat = student ? student_logpdf(zh, row_of(q.mean, r), row_of(q.scale, r), nu_rows(r, 0), shared)
                                   : normal_logpdf(zh, row_of(q.mean, r), row_of(q.scale, r));
    const double lq_z = normal_logpdf(zr, zmean[r], zscale[r]);
    const double lp_zhat = student_logpdf(zh, row_of(shift, r), std::vector<double>(m, 1.0), cfg.nu0, shared);
    const double lp_z = normal_logpdf(zr, std::vector<double>(m, 0.0), std::vector<double>(m, 1.0));
    elbo += lpyhat + lpy + cfg.beta * (lp_zhat + lp_z - lq_zhat - lq_z);
    t.log_p_yhat += lpyhat / double(rows);
    t.log_p_y += lpy / double(rows);
    t.log_q_zhat += lq_zhat / double(rows);
    t.log_q_z += lq_z / double(rows);
    t.log_p_zhat_given_z += lp_zhat / double(rows);
    t.log_p_z += lp_z / double(rows);
  }
  t.loss = -elbo / double(rows);
  return t;
}

ModelConfig tiny_config(std::size_t d, std::size_t k) {
  ModelConfig mc;
  mc.d = d;
  mc.k = k;
  mc.m = 1;
  mc.nu = mc.nu0 = 4.0;
  mc.hidden = mc.label_hidden = mc.label_embedding = 16;
  return mc;
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.d = 4;
  mc.k = 3;
  mc.m = 3;
  mc.hidden = mc.label_hidden = mc.label_embedding = 8;
  mc.beta = 0.3;
  return mc;
}

namespace {

struct Variant {
  std::string name;
  ProposalFamily proposal;
  NuMode nu_mode;
  StudentCoupling coupling;
};

const std::vector<Variant>& model_variants() {
  static const std::vector<Variant> v{
      {"student-shared", ProposalFamily::Student, NuMode::Fixed, StudentCoupling::Shared},
      {"student-independent", ProposalFamily::Student, NuMode::Fixed, StudentCoupling::Independent},
      {"normal", ProposalFamily::Normal, NuMode::Fixed, StudentCoupling::Shared},
      {"student-learned-nu", ProposalFamily::Student, NuMode::Learned, StudentCoupling::Shared}};
  return v;
}

Tensor random_bits(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (auto& v : t.data()) v = double(rng() & 1u);
  return t;
}

Tensor random_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  fill_normal(rng, t.data());
  return t;
}

}  // namespace

Summary loss_suite(std::uint64_t seed) {
  Summary s;
  s.name = "single-sample losses vs straight-line oracle";
  std::ostringstream detail;
  for (std::size_t vi = 0; vi < model_variants().size(); ++vi) {
    const auto& v = model_variants()[vi];
    ModelConfig mc = small_config();
    mc.proposal = v.proposal;
    mc.nu_mode = v.nu_mode;
    mc.coupling = v.coupling;
    for (int trial = 0; trial < 3; ++trial) {
      LsnpcModel model(mc, derive_seed(seed, vi, trial));
      Rng rng = make_rng(seed, 100 + vi, trial);
      const Tensor x = random_normal(7, mc.d, rng), yhat = random_bits(7, mc.k, rng), y = random_bits(7, mc.k, rng);
      for (bool supervised : {false, true}) {
        const LossDraws draws = model.draw(x, yhat, supervised, rng);
        const LossTerms got = supervised ? model.supervised_loss(x, y, yhat, draws) : model.unsupervised_loss(x, yhat, draws);
        const LossTerms want = straight_line_loss(model, x, supervised ? &y : nullptr, yhat, draws);
        const double pairs[][2] = {{got.loss, want.loss},
                                   {got.log_p_yhat, want.log_p_yhat},
                                   {got.log_q_zhat, want.log_q_zhat},
                                   {got.log_q_z, want.log_q_z},
                                   {got.log_p_zhat_given_z, want.log_p_zhat_given_z},
                                   {got.log_p_z, want.log_p_z},
                                   {got.log_p_y, want.log_p_y}};
        double err = 0;
        for (const auto& p : pairs) err = std::max(err, std::abs(p[0] - p[1]) / std::max(1.0, std::abs(p[1])));
        note_error(s, err, 1e-9);
        if (err > 1e-9) detail << v.name << (supervised ? " supervised" : " unsupervised") << " err " << err << "; ";
      }
    }
  }
  s.detail = detail.str();
  return s;
}

Summary knn_suite(std::size_t queries, std::uint64_t seed) {
  Summary s;
  s.name = "KNN vs exhaustive scan";
  Rng rng(seed);
  const std::size_t n = 60, d = 3, k = 4;
  FeatureMatrix train(n, d);
  LabelMatrix labels(n, k);
  std::uniform_int_distribution<int> grid(-3, 3);
  // Integer coordinates make exact distance ties common.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) train(i, c) = float(grid(rng));
    for (std::size_t c = 0; c < k; ++c) labels(i, c) = rng() & 1u;
  }
  FeatureMatrix q(queries, d);
  for (std::size_t i = 0; i < queries; ++i)
    for (std::size_t c = 0; c < d; ++c) q(i, c) = float(grid(rng)) + (i % 3 == 0 ? 0.5f : 0.0f);
  for (std::size_t K : {1u, 4u, 5u}) {
    const LabelMatrix got = knn_correct(train, labels, q, K);
    for (std::size_t i = 0; i < queries; ++i) {
      std::vector<double> dist(n);
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < d; ++c) acc += std::pow(double(q(i, c)) - double(train(j, c)), 2);
        dist[j] = acc;
      }
      std::vector<std::size_t> votes(k, 0);
      for (std::size_t j = 0; j < n; ++j) {
        std::size_t rank = 0;
        for (std::size_t o = 0; o < n; ++o) rank += dist[o] < dist[j] || (dist[o] == dist[j] && o < j);
        if (rank < K)
          for (std::size_t c = 0; c < k; ++c) votes[c] += labels(j, c);
      }
      std::size_t mismatches = 0;
      for (std::size_t c = 0; c < k; ++c) mismatches += got(i, c) != (2 * votes[c] >= K ? 1 : 0);
      note_error(s, double(mismatches), 0.0);
    }
  }
  return s;
}

ProbMatrix quadrature_correction(const LsnpcModel& model, const ProbMatrix& base_probs, const FeatureMatrix& x) {
  const auto& cfg = model.config();
  if (cfg.m != 1) throw std::invalid_argument("quadrature correction needs m = 1");
  const QuadratureGrid grid{-40.0, 40.0, 0.02};
  const auto axis = grid.axis();
  const std::size_t n = axis.size(), k = cfg.k, d = cfg.d;
  const auto gh = gauss_hermite(32);
  const Tensor col(Shape{n, 1}, axis);
  const LatentParams qz = model.encode_zhat_to_z(col);
  Tensor znodes(Shape{n * gh.nodes.size(), 1});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) znodes(j * gh.nodes.size() + i, 0) = qz.mean(j, 0) + qz.scale(j, 0) * gh.nodes[i];

  ProbMatrix out(x.rows(), k);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Tensor xrep(Shape{znodes.rows(), d});
    for (std::size_t i = 0; i < znodes.rows(); ++i)
      for (std::size_t c = 0; c < d; ++c) xrep(i, c) = x(r, c);
    const Tensor g = model.decode_labels(xrep, znodes);
    // E over z | zhat_j of g(x, z), per grid point.
    std::vector<double> inner(n * k, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < gh.nodes.size(); ++i)
        for (std::size_t c = 0; c < k; ++c) inner[j * k + c] += gh.weights[i] * g(j * gh.nodes.size() + i, c);
    for (std::size_t mask = 0; mask < (1u << k); ++mask) {
      double py = 1;
      Tensor xt(Shape{1, d}), yt(Shape{1, k});
      for (std::size_t c = 0; c < d; ++c) xt(0, c) = x(r, c);
      for (std::size_t c = 0; c < k; ++c) {
        const bool on = (mask >> c) & 1u;
        yt(0, c) = on;
        py *= on ? base_probs(r, c) : 1 - base_probs(r, c);
      }
      const LatentParams q = model.encode_xy(xt, yt);
      const bool student = cfg.proposal == ProposalFamily::Student;
      double mass = 0;
      std::vector<double> acc(k, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double lq = student ? student_logpdf({axis[j]}, {q.mean(0, 0)}, {q.scale(0, 0)}, cfg.nu, true)
                                  : normal_logpdf({axis[j]}, {q.mean(0, 0)}, {q.scale(0, 0)});
        const double w = std::exp(lq) * grid.step;
        mass += w;
        for (std::size_t c = 0; c < k; ++c) acc[c] += w * inner[j * k + c];
      }
      if (std::abs(mass - 1) > 1e-3) throw std::runtime_error("quadrature correction: grid mass " + std::to_string(mass));
      for (std::size_t c = 0; c < k; ++c) out(r, c) += py * acc[c] / mass;
    }
  }
  return out;
}

Summary correction_suite(std::uint64_t seed, const CorrectionConfig& budget, double tolerance) {
  Summary s;
  s.name = "correction vs 2-D quadrature";
  for (std::uint64_t t = 0; t < 3; ++t) {
    LsnpcModel model(tiny_config(), derive_seed(seed, 7, t));
    Rng rng = make_rng(seed, 8, t);
    FeatureMatrix x(4, 2);
    ProbMatrix probs(4, 2);
    std::normal_distribution<double> normal(0, 1);
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 2; ++c) {
        x(r, c) = float(normal(rng));
        probs(r, c) = unif(rng);
      }
    const ProbMatrix want = quadrature_correction(model, probs, x);
    CorrectionConfig cc = budget;
    cc.seed = derive_seed(seed, 9, t);
    const auto got = correct(model, probs, x, cc);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 2; ++c) note_error(s, std::abs(got.probs(r, c) - want(r, c)), tolerance);
  }
  return s;
}

namespace {

struct OpCase {
  std::string name;
  Shape p_shape, q_shape;
  double lo, hi;  // sampling range for P
  std::function<Var(Graph&, Var, Var)> build;
  double q_lo = -2, q_hi = 2;
};

std::vector<OpCase> op_cases() {
  return {
      {"add", {3, 4}, {3, 4}, -2, 2, [](Graph&, Var p, Var q) { return p + q; }},
      {"add-broadcast-row", {3, 4}, {1, 4}, -2, 2, [](Graph&, Var p, Var q) { return p + q; }},
      {"sub", {3, 4}, {3, 4}, -2, 2, [](Graph&, Var p, Var q) { return p - q; }},
      {"mul", {3, 4}, {3, 4}, -2, 2, [](Graph&, Var p, Var q) { return p * q; }},
      {"mul-broadcast-col", {3, 4}, {3, 1}, -2, 2, [](Graph&, Var p, Var q) { return p * q; }},
      {"div", {3, 4}, {3, 4}, -2, 2, [](Graph&, Var p, Var q) { return p / q; }, 0.5, 2.0},
      {"neg", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return -p; }},
      {"matmul", {3, 4}, {4, 2}, -2, 2, [](Graph&, Var p, Var q) { return matmul(p, q); }},
      {"exp", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return exp(p); }},
      {"log", {3, 4}, {1, 1}, 0.2, 3, [](Graph&, Var p, Var) { return log(p); }},
      {"log1p", {3, 4}, {1, 1}, -0.5, 3, [](Graph&, Var p, Var) { return log1p(p); }},
      {"sqrt", {3, 4}, {1, 1}, 0.2, 3, [](Graph&, Var p, Var) { return sqrt(p); }},
      {"square", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return square(p); }},
      {"sigmoid", {3, 4}, {1, 1}, -4, 4, [](Graph&, Var p, Var) { return sigmoid(p); }},
      {"softplus", {3, 4}, {1, 1}, -4, 4, [](Graph&, Var p, Var) { return softplus(p); }},
      {"gelu", {3, 4}, {1, 1}, -3, 3, [](Graph&, Var p, Var) { return gelu(p); }},
      {"relu", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return relu(p); }},
      {"lgamma", {3, 4}, {1, 1}, 0.3, 5, [](Graph&, Var p, Var) { return lgamma(p); }},
      {"scale", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return p * 2.5; }},
      {"shift", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return p + 1.5; }},
      {"clamp", {3, 4}, {1, 1}, -3, 3, [](Graph&, Var p, Var) { return clamp(p, -1.0, 1.0); }},
      {"sum", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return sum(p * p); }},
      {"mean", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return mean(p * p); }},
      {"sum-cols", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return sum_cols(p * p); }},
      {"concat", {3, 4}, {3, 2}, -2, 2, [](Graph& g, Var p, Var q) { return g.concat_cols({p, q * q}); }},
      {"slice", {3, 4}, {1, 1}, -2, 2, [](Graph& g, Var p, Var) { return g.slice_cols(p * p, 1, 3); }},
      {"layer-norm", {3, 4}, {1, 1}, -2, 2, [](Graph&, Var p, Var) { return layer_norm(p); }},
  };
}

// Keeps samples away from kinks where finite differences are meaningless.
double away_from_kinks(const std::string& op, double v) {
  if (op == "relu" && std::abs(v) < 0.05) return v < 0 ? -0.05 : 0.05;
  if (op == "clamp" && std::abs(std::abs(v) - 1.0) < 0.05) return v < 0 ? -1.1 : 1.1;
  return v;
}

}  // namespace

Summary gradient_suite(std::uint64_t seed, std::size_t inputs_per_op) {
  Summary s;
  s.name = "gradient checks";
  std::ostringstream detail;
  Rng rng(seed);
  for (const auto& op : op_cases()) {
    double worst = 0;
    for (std::size_t trial = 0; trial < inputs_per_op; ++trial) {
      std::uniform_real_distribution<double> up(op.lo, op.hi), uq(op.q_lo, op.q_hi);
      Tensor pv(op.p_shape), qv(op.q_shape);
      for (auto& v : pv.data()) v = away_from_kinks(op.name, up(rng));
      for (auto& v : qv.data()) {
        v = uq(rng);
        if (op.name == "div" && (rng() & 1u)) v = -v;
      }
      auto P = std::make_shared<Parameter>("p", pv);
      auto Q = std::make_shared<Parameter>("q", qv);
      Graph g;
      Var out = op.build(g, g.param(P), g.param(Q));
      g.eval({});
      Tensor weights(g.value(out).shape());
      for (auto& v : weights.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
      g.set_output(sum(out * g.constant(weights)));
      worst = std::max(worst, grad_check(g, {}, {P, Q}, 1e-6));
    }
    note_error(s, worst, 1e-4);
    if (worst > 1e-4) detail << op.name << " " << worst << "; ";
  }
  // Model losses on a small network.
  for (std::size_t vi = 0; vi < model_variants().size(); ++vi) {
    const auto& v = model_variants()[vi];
    ModelConfig mc = small_config();
    mc.proposal = v.proposal;
    mc.nu_mode = v.nu_mode;
    mc.coupling = v.coupling;
    LsnpcModel model(mc, derive_seed(seed, 200, vi));
    Rng r = make_rng(seed, 201, vi);
    // Zero biases plus an all-zero label row put a constant vector into layer norm, where curvature
    // is ~1/eps and central differences are useless.
    for (const auto& [name, p] : model.parameters())
      for (auto& v : p->value.data()) v += std::normal_distribution<double>(0, 0.1)(r);
    const Tensor x = random_normal(5, mc.d, r), yhat = random_bits(5, mc.k, r), y = random_bits(5, mc.k, r);
    for (bool supervised : {false, true}) {
      const LossDraws draws = model.draw(x, yhat, supervised, r);
      Graph g;
      model.build_loss(g, supervised);
      std::vector<ParameterPtr> params;
      for (const auto& [name, p] : model.parameters()) params.push_back(p);
      const double err = grad_check(g, loss_bindings(x, supervised ? &y : nullptr, yhat, draws), params, 1e-6);
      note_error(s, err, 1e-4);
      if (err > 1e-4) detail << v.name << (supervised ? " supervised" : " unsupervised") << " " << err << "; ";
    }
  }
  {
    BaseClassifier h(4, 3, BaseArchitecture{{6}, Activation::Gelu}, seed);
    for (const auto& [name, p] : h.parameters())
      for (auto& v : p->value.data()) v = std::normal_distribution<double>(0, 0.5)(rng);
    Graph g;
    Var xin = g.input("x"), yin = g.input("y");
    Var logits = h.network().forward(g, xin);
    g.set_output(mean(softplus(logits) - yin * logits));
    std::vector<ParameterPtr> params;
    for (const auto& [name, p] : h.parameters()) params.push_back(p);
    const double err = grad_check(g, {{"x", random_normal(6, 4, rng)}, {"y", random_bits(6, 3, rng)}}, params, 1e-6);
    note_error(s, err, 1e-4);
    if (err > 1e-4) detail << "base bce " << err << "; ";
  }
  s.detail = detail.str();
  return s;
}

}  // namespace oracle
