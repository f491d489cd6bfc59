#include "lsnpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lsnpc/binary_io.hpp"
#include "lsnpc/checkpoint.hpp"
#include "lsnpc/correction.hpp"
#include "lsnpc/metrics.hpp"
#include "lsnpc/special.hpp"

namespace lsnpc {

std::string to_string(ProposalFamily f) { return f == ProposalFamily::Student ? "student" : "normal"; }
std::string to_string(NuMode m) { return m == NuMode::Fixed ? "fixed" : "learned"; }
std::string to_string(StudentCoupling c) { return c == StudentCoupling::Shared ? "shared" : "independent"; }

ProposalFamily parse_proposal(const std::string& s) {
  if (s == "student") return ProposalFamily::Student;
  if (s == "normal" || s == "gauss") return ProposalFamily::Normal;
  throw std::invalid_argument("unknown proposal family: " + s);
}

NuMode parse_nu_mode(const std::string& s) {
  if (s == "fixed") return NuMode::Fixed;
  if (s == "learned") return NuMode::Learned;
  throw std::invalid_argument("unknown nu mode: " + s);
}

StudentCoupling parse_coupling(const std::string& s) {
  if (s == "shared") return StudentCoupling::Shared;
  if (s == "independent") return StudentCoupling::Independent;
  throw std::invalid_argument("unknown student coupling: " + s);
}

void ModelConfig::validate() const {
  if (d == 0 || k == 0 || m == 0) throw std::invalid_argument("model: d, k and m must be positive");
  if (nu_mode == NuMode::Fixed && proposal == ProposalFamily::Student && !(nu > 2))
    throw std::invalid_argument("model: fixed proposal dof must exceed 2");
  if (!(nu0 > 2)) throw std::invalid_argument("model: generative dof must exceed 2");
  if (!(eta >= 0 && eta <= 1)) throw std::invalid_argument("model: eta must lie in [0, 1]");
  if (!(beta >= 0)) throw std::invalid_argument("model: beta must be non-negative");
  if (!(scale_floor > 0)) throw std::invalid_argument("model: scale floor must be positive");
  if (label_layers == 0 || shift_layers == 0) throw std::invalid_argument("model: layer counts must be positive");
  if (hidden == 0 || label_hidden == 0 || label_embedding == 0) throw std::invalid_argument("model: widths must be positive");
  if (samples_y == 0 || samples_z == 0) throw std::invalid_argument("model: sample counts must be positive");
}

std::string ModelConfig::manifest() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "beta = " << beta << '\n'
     << "coupling = " << to_string(coupling) << '\n'
     << "d = " << d << '\n'
     << "eta = " << eta << '\n'
     << "hidden = " << hidden << '\n'
     << "k = " << k << '\n'
     << "label_embedding = " << label_embedding << '\n'
     << "label_hidden = " << label_hidden << '\n'
     << "label_layers = " << label_layers << '\n'
     << "m = " << m << '\n'
     << "nu = " << nu << '\n'
     << "nu0 = " << nu0 << '\n'
     << "nu_mode = " << to_string(nu_mode) << '\n'
     << "proposal = " << to_string(proposal) << '\n'
     << "samples_y = " << samples_y << '\n'
     << "samples_z = " << samples_z << '\n'
     << "scale_floor = " << scale_floor << '\n'
     << "shift_layers = " << shift_layers << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse_manifest(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("model manifest: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), v = line.substr(eq + 3);
    if (key == "beta") c.beta = std::stod(v);
    else if (key == "coupling") c.coupling = parse_coupling(v);
    else if (key == "d") c.d = std::stoul(v);
    else if (key == "eta") c.eta = std::stod(v);
    else if (key == "hidden") c.hidden = std::stoul(v);
    else if (key == "k") c.k = std::stoul(v);
    else if (key == "label_embedding") c.label_embedding = std::stoul(v);
    else if (key == "label_hidden") c.label_hidden = std::stoul(v);
    else if (key == "label_layers") c.label_layers = std::stoul(v);
    else if (key == "m") c.m = std::stoul(v);
    else if (key == "nu") c.nu = std::stod(v);
    else if (key == "nu0") c.nu0 = std::stod(v);
    else if (key == "nu_mode") c.nu_mode = parse_nu_mode(v);
    else if (key == "proposal") c.proposal = parse_proposal(v);
    else if (key == "samples_y") c.samples_y = std::stoul(v);
    else if (key == "samples_z") c.samples_z = std::stoul(v);
    else if (key == "scale_floor") c.scale_floor = std::stod(v);
    else if (key == "shift_layers") c.shift_layers = std::stoul(v);
    else throw std::runtime_error("model manifest: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string LossTerms::breakdown() const {
  std::ostringstream os;
  os << "loss=" << loss << " log_p_yhat=" << log_p_yhat << " log_p_y=" << log_p_y
     << " log_p_zhat_given_z=" << log_p_zhat_given_z << " log_p_z=" << log_p_z << " log_q_zhat=" << log_q_zhat
     << " log_q_z=" << log_q_z;
  return os.str();
}

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  std::vector<std::size_t> s{in};
  for (std::size_t i = 1; i < layers; ++i) s.push_back(hidden);
  s.push_back(out);
  return s;
}

// Per-row log densities; every result is rows x 1.
Var normal_logpdf(Graph& g, Var x, Var mean, Var scale, std::size_t m) {
  (void)g;
  return -0.5 * sum_cols(square((x - mean) / scale)) - sum_cols(log(scale)) - 0.5 * static_cast<double>(m) * kLog2Pi;
}

Var std_normal_logpdf(Var x, std::size_t m) {
  return -0.5 * sum_cols(square(x)) - 0.5 * static_cast<double>(m) * kLog2Pi;
}

Var student_logpdf(Var x, Var mean, Var scale, Var nu, std::size_t m, StudentCoupling coupling) {
  Var u = square((x - mean) / scale);
  if (coupling == StudentCoupling::Shared) {
    const double md = static_cast<double>(m);
    return lgamma((nu + md) * 0.5) - lgamma(nu * 0.5) - 0.5 * md * log(nu * kPi) - sum_cols(log(scale)) -
           (nu + md) * 0.5 * log1p(sum_cols(u) / nu);
  }
  Var per_dim = lgamma((nu + 1.0) * 0.5) - lgamma(nu * 0.5) - 0.5 * log(nu * kPi) - log(scale) -
                (nu + 1.0) * 0.5 * log1p(u / nu);
  return sum_cols(per_dim);
}

Var bernoulli_logpmf(Var y, Var p) { return sum_cols(y * log(p) + (1.0 - y) * log(1.0 - p)); }

double column_mean(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return t.data().empty() ? 0.0 : s / static_cast<double>(t.data().size());
}

}  // namespace

LsnpcModel::LsnpcModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, streams::kModelInit);
  const std::size_t m = cfg_.m, joint = cfg_.d + cfg_.label_embedding;
  label_net_ = Mlp(store_, "label",
                   MlpSpec{layer_sizes(cfg_.k, cfg_.label_hidden, cfg_.label_layers, cfg_.label_embedding),
                           Activation::Gelu, true},
                   rng);
  theta_net_ = Mlp(store_, "theta", MlpSpec{{joint, cfg_.hidden, 2 * m}, Activation::Gelu, false}, rng);
  kappa_net_ = Mlp(store_, "kappa", MlpSpec{{m, cfg_.hidden, 2 * m}, Activation::Gelu, false}, rng);
  psi_net_ = Mlp(store_, "psi", MlpSpec{layer_sizes(m, cfg_.hidden, cfg_.shift_layers, m), Activation::Gelu, false}, rng);
  phi_net_ = Mlp(store_, "phi", MlpSpec{{cfg_.d + m, cfg_.hidden, cfg_.k}, Activation::Gelu, false}, rng);
  if (cfg_.nu_mode == NuMode::Learned)
    nu_net_ = Mlp(store_, "nu", MlpSpec{{joint, cfg_.hidden, 1}, Activation::Gelu, false}, rng);
}

const Mlp& LsnpcModel::nu_net() const {
  if (cfg_.nu_mode != NuMode::Learned) throw std::logic_error("nu network exists only in learned mode");
  return nu_net_;
}

namespace {

Var joint_input(const Mlp& label_net, Graph& g, Var x, Var y) {
  return g.concat_cols({x, label_net.forward(g, y)});
}

LatentVars split_latent(Var out, std::size_t m, double floor) {
  Graph& g = *out.graph;
  return {g.slice_cols(out, 0, m), softplus(g.slice_cols(out, m, 2 * m)) + floor};
}

}  // namespace

LatentVars LsnpcModel::encode_xy(Graph& g, Var x, Var y) const {
  return split_latent(theta_net_.forward(g, joint_input(label_net_, g, x, y)), cfg_.m, cfg_.scale_floor);
}

LatentVars LsnpcModel::encode_zhat_to_z(Graph& g, Var zhat) const {
  return split_latent(kappa_net_.forward(g, zhat), cfg_.m, cfg_.scale_floor);
}

Var LsnpcModel::decode_shift(Graph& g, Var z) const { return psi_net_.forward(g, z); }

Var LsnpcModel::decode_labels(Graph& g, Var x, Var z) const {
  return clamp(sigmoid(phi_net_.forward(g, g.concat_cols({x, z}))), kProbEpsilon, 1.0 - kProbEpsilon);
}

Var LsnpcModel::learned_nu(Graph& g, Var x, Var yhat) const {
  return relu(nu_net().forward(g, joint_input(label_net_, g, x, yhat))) + 1.0;
}

LossGraph LsnpcModel::build_loss(Graph& g, bool supervised) const {
  const std::size_t m = cfg_.m;
  LossGraph lg;
  lg.supervised = supervised;
  Var x = g.input("x");
  Var yhat = g.input("yhat");
  Var eps_zhat = g.input("eps_zhat");
  Var eps_z = g.input("eps_z");

  Var joint = joint_input(label_net_, g, x, yhat);
  LatentVars q_zhat = split_latent(theta_net_.forward(g, joint), m, cfg_.scale_floor);
  Var zhat;
  if (cfg_.proposal == ProposalFamily::Student) {
    Var nu = cfg_.nu_mode == NuMode::Learned ? relu(nu_net_.forward(g, joint)) + 1.0 : g.scalar(cfg_.nu);
    zhat = q_zhat.mean + q_zhat.scale * eps_zhat * g.input("student_w");
    lg.log_q_zhat = student_logpdf(zhat, q_zhat.mean, q_zhat.scale, nu, m, cfg_.coupling);
  } else {
    zhat = q_zhat.mean + q_zhat.scale * eps_zhat;
    lg.log_q_zhat = normal_logpdf(g, zhat, q_zhat.mean, q_zhat.scale, m);
  }
  g.label(zhat, "zhat");

  LatentVars q_z = encode_zhat_to_z(g, zhat);
  Var z_mean = q_z.mean, z_scale = q_z.scale, eps = eps_z;
  if (supervised) {
    Var y = g.input("y");
    Var branch = g.input("branch");
    LatentVars q_zy = encode_xy(g, x, y);
    Var other = 1.0 - branch;
    z_mean = branch * q_zy.mean + other * q_z.mean;
    z_scale = branch * q_zy.scale + other * q_z.scale;
    eps = branch * g.input("eps_zy") + other * eps_z;
    Var z = z_mean + z_scale * eps;
    g.label(z, "z");
    lg.log_p_y = bernoulli_logpmf(y, decode_labels(g, x, z));
    lg.log_q_z = normal_logpdf(g, z, z_mean, z_scale, m);
    lg.log_p_zhat_given_z = student_logpdf(zhat, decode_shift(g, z), g.scalar(1.0), g.scalar(cfg_.nu0), m, cfg_.coupling);
    lg.log_p_z = std_normal_logpdf(z, m);
  } else {
    Var z = z_mean + z_scale * eps;
    g.label(z, "z");
    lg.log_q_z = normal_logpdf(g, z, z_mean, z_scale, m);
    lg.log_p_zhat_given_z = student_logpdf(zhat, decode_shift(g, z), g.scalar(1.0), g.scalar(cfg_.nu0), m, cfg_.coupling);
    lg.log_p_z = std_normal_logpdf(z, m);
  }
  lg.log_p_yhat = bernoulli_logpmf(yhat, decode_labels(g, x, zhat));

  Var latent = lg.log_p_zhat_given_z + lg.log_p_z - lg.log_q_zhat - lg.log_q_z;
  Var elbo = lg.log_p_yhat + cfg_.beta * latent;
  if (supervised) elbo = elbo + lg.log_p_y;
  lg.loss = -mean(elbo);
  g.set_output(lg.loss);
  return lg;
}

namespace {

Tensor eval_single(Graph& g, Var out, const Bindings& b) {
  g.set_output(out);
  auto r = g.eval(b);
  return r.value;
}

LatentParams eval_latent(Graph& g, const LatentVars& v, const Bindings& b) {
  Var both = g.concat_cols({v.mean, v.scale});
  Tensor t = eval_single(g, both, b);
  const std::size_t m = t.cols() / 2;
  LatentParams p{Tensor(Shape{t.rows(), m}), Tensor(Shape{t.rows(), m})};
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < m; ++c) {
      p.mean(r, c) = t(r, c);
      p.scale(r, c) = t(r, m + c);
    }
  return p;
}

void require_cols(const Tensor& t, std::size_t cols, const char* what) {
  if (t.cols() != cols)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                                std::to_string(t.cols()));
}

}  // namespace

LatentParams LsnpcModel::encode_xy(const Tensor& x, const Tensor& y) const {
  require_cols(x, cfg_.d, "encode_xy features");
  require_cols(y, cfg_.k, "encode_xy labels");
  if (x.rows() != y.rows()) throw std::invalid_argument("encode_xy: row counts differ");
  Graph g;
  auto v = encode_xy(g, g.input("x"), g.input("y"));
  return eval_latent(g, v, {{"x", x}, {"y", y}});
}

LatentParams LsnpcModel::encode_zhat_to_z(const Tensor& zhat) const {
  require_cols(zhat, cfg_.m, "encode_zhat_to_z");
  Graph g;
  auto v = encode_zhat_to_z(g, g.input("zhat"));
  return eval_latent(g, v, {{"zhat", zhat}});
}

Tensor LsnpcModel::decode_shift(const Tensor& z) const {
  require_cols(z, cfg_.m, "decode_shift");
  Graph g;
  return eval_single(g, decode_shift(g, g.input("z")), {{"z", z}});
}

Tensor LsnpcModel::decode_labels(const Tensor& x, const Tensor& z) const {
  require_cols(x, cfg_.d, "decode_labels features");
  require_cols(z, cfg_.m, "decode_labels latent");
  Graph g;
  return eval_single(g, decode_labels(g, g.input("x"), g.input("z")), {{"x", x}, {"z", z}});
}

Tensor LsnpcModel::learned_nu(const Tensor& x, const Tensor& yhat) const {
  require_cols(x, cfg_.d, "learned_nu features");
  require_cols(yhat, cfg_.k, "learned_nu labels");
  Graph g;
  return eval_single(g, learned_nu(g, g.input("x"), g.input("y")), {{"x", x}, {"y", yhat}});
}

LossDraws LsnpcModel::draw(const Tensor& x, const Tensor& yhat, bool supervised, Rng& rng) const {
  const std::size_t rows = x.rows(), m = cfg_.m;
  const bool student = cfg_.proposal == ProposalFamily::Student;
  const bool shared = cfg_.coupling == StudentCoupling::Shared;
  Tensor nu;
  if (student && cfg_.nu_mode == NuMode::Learned) nu = learned_nu(x, yhat);
  LossDraws d;
  d.eps_zhat = Tensor(Shape{rows, m});
  d.student_w = Tensor(Shape{rows, shared ? 1 : m}, 1.0);
  d.eps_z = Tensor(Shape{rows, m});
  if (supervised) {
    d.eps_zy = Tensor(Shape{rows, m});
    d.branch = Tensor(Shape{rows, 1});
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < m; ++c) d.eps_zhat(r, c) = normal(rng);
    if (student) {
      const double dof = cfg_.nu_mode == NuMode::Learned ? nu(r, 0) : cfg_.nu;
      for (std::size_t c = 0; c < d.student_w.cols(); ++c) d.student_w(r, c) = std::sqrt(dof / draw_chi_squared(rng, dof));
    }
    for (std::size_t c = 0; c < m; ++c) d.eps_z(r, c) = normal(rng);
    if (supervised) {
      d.branch(r, 0) = unif(rng) < cfg_.eta ? 1.0 : 0.0;
      for (std::size_t c = 0; c < m; ++c) d.eps_zy(r, c) = normal(rng);
    }
  }
  return d;
}

Bindings loss_bindings(const Tensor& x, const Tensor* y, const Tensor& yhat, const LossDraws& draws) {
  Bindings b{{"x", x}, {"yhat", yhat}, {"eps_zhat", draws.eps_zhat}, {"student_w", draws.student_w}, {"eps_z", draws.eps_z}};
  if (y) {
    b["y"] = *y;
    b["eps_zy"] = draws.eps_zy;
    b["branch"] = draws.branch;
  }
  return b;
}

LossTerms read_terms(const Graph& g, const LossGraph& lg, const Bindings& b) {
  LossTerms t;
  t.loss = g.value(lg.loss).item();
  t.log_p_yhat = column_mean(g.value(lg.log_p_yhat));
  t.log_p_zhat_given_z = column_mean(g.value(lg.log_p_zhat_given_z));
  t.log_p_z = column_mean(g.value(lg.log_p_z));
  t.log_q_zhat = column_mean(g.value(lg.log_q_zhat));
  t.log_q_z = column_mean(g.value(lg.log_q_z));
  t.rows = b.at("x").rows();
  if (lg.supervised) {
    t.log_p_y = column_mean(g.value(lg.log_p_y));
    for (double v : b.at("branch").data()) t.theta_branch += v > 0.5 ? 1 : 0;
  }
  return t;
}

namespace {

LossTerms evaluate_loss(const LsnpcModel& model, bool supervised, const Tensor& x, const Tensor* y, const Tensor& yhat,
                        const LossDraws& draws) {
  const auto& cfg = model.config();
  require_cols(x, cfg.d, "loss features");
  require_cols(yhat, cfg.k, "loss noisy labels");
  if (y) require_cols(*y, cfg.k, "loss labels");
  Graph g;
  LossGraph lg = model.build_loss(g, supervised);
  Bindings b = loss_bindings(x, y, yhat, draws);
  auto r = g.eval(b);
  LossTerms t = read_terms(g, lg, b);
  if (!r.finite || !std::isfinite(t.loss)) throw std::runtime_error("non-finite loss: " + t.breakdown());
  return t;
}

}  // namespace

LossTerms LsnpcModel::unsupervised_loss(const Tensor& x, const Tensor& yhat, const LossDraws& draws) const {
  return evaluate_loss(*this, false, x, nullptr, yhat, draws);
}

LossTerms LsnpcModel::unsupervised_loss(const Tensor& x, const Tensor& yhat, Rng& rng) const {
  return unsupervised_loss(x, yhat, draw(x, yhat, false, rng));
}

LossTerms LsnpcModel::supervised_loss(const Tensor& x, const Tensor& y, const Tensor& yhat,
                                      const LossDraws& draws) const {
  return evaluate_loss(*this, true, x, &y, yhat, draws);
}

LossTerms LsnpcModel::supervised_loss(const Tensor& x, const Tensor& y, const Tensor& yhat, Rng& rng) const {
  return supervised_loss(x, y, yhat, draw(x, yhat, true, rng));
}

void LsnpcTrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (clean_epochs > epochs) throw std::invalid_argument("clean epochs cannot exceed total epochs");
}

namespace {

// Index spaces inside the training stream.
constexpr std::uint64_t kShuffleSpace = 1ull << 40;
constexpr std::uint64_t kCleanSpace = 1ull << 41;
constexpr std::uint64_t kCleanShuffleSpace = 1ull << 42;

struct Batch {
  Tensor x, y, yhat;
};

// Each selected row is repeated samples_y * samples_z times; every copy gets
// its own yhat draw from the base probabilities.
Batch make_batch(const FeatureMatrix& x, const LabelMatrix* y, const ProbMatrix& probs,
                 std::span<const std::size_t> idx, std::size_t samples_y, std::size_t samples_z, Rng& rng) {
  const std::size_t reps = samples_y * samples_z, rows = idx.size() * reps, d = x.cols(), k = probs.cols();
  Batch b{Tensor(Shape{rows, d}), y ? Tensor(Shape{rows, k}) : Tensor(), Tensor(Shape{rows, k})};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t r = 0;
  for (std::size_t i : idx) {
    auto xr = x.row(i);
    auto pr = probs.row(i);
    for (std::size_t s = 0; s < samples_y; ++s) {
      std::vector<double> draw(k);
      for (std::size_t c = 0; c < k; ++c) draw[c] = unif(rng) < pr[c] ? 1.0 : 0.0;
      for (std::size_t t = 0; t < samples_z; ++t, ++r) {
        for (std::size_t c = 0; c < d; ++c) b.x(r, c) = xr[c];
        for (std::size_t c = 0; c < k; ++c) b.yhat(r, c) = draw[c];
        if (y)
          for (std::size_t c = 0; c < k; ++c) b.y(r, c) = (*y)(i, c);
      }
    }
  }
  return b;
}

}  // namespace

void train_semi_supervised(LsnpcModel& model, const NoisySet& noisy, const CleanSet& clean,
                           const LsnpcTrainConfig& cfg, const ValidationSet* validation,
                           const CorrectionConfig* correction) {
  cfg.validate();
  const auto& mc = model.config();
  if (noisy.x.rows() != noisy.base_probs.rows()) throw std::invalid_argument("noisy set: row counts differ");
  if (noisy.x.cols() != mc.d || noisy.base_probs.cols() != mc.k) throw std::invalid_argument("noisy set: dims differ from model");
  if (!clean.empty() && (clean.x.rows() != clean.y.rows() || clean.x.rows() != clean.base_probs.rows()))
    throw std::invalid_argument("clean set: row counts differ");

  Optimizer opt(model.parameters(), OptimizerConfig{cfg.optimizer, cfg.weight_decay});
  Graph ug, sg;
  LossGraph ul = model.build_loss(ug, false);
  LossGraph sl;
  if (!clean.empty()) sl = model.build_loss(sg, true);

  const bool select = cfg.select_by_validation && validation && validation->x.rows() > 0;
  CorrectionConfig ccfg = correction ? *correction : CorrectionConfig{};
  auto best = model.state();
  if (select) {
    auto res = correct(model, validation->base_probs, validation->x, ccfg);
    model.best_validation_micro_f1 = micro_f1(validation->y, res.labels);
  }

  std::vector<std::size_t> order(noisy.x.rows()), clean_order(clean.x.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::iota(clean_order.begin(), clean_order.end(), std::size_t{0});
  const std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t n_clean_batches = (clean_order.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(cfg.seed, streams::kModelTrain, kShuffleSpace + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      Rng rng = make_rng(cfg.seed, streams::kModelTrain, (epoch << 20) + b);
      Batch batch = make_batch(noisy.x, nullptr, noisy.base_probs, std::span(order).subspan(lo, hi - lo), mc.samples_y,
                               mc.samples_z, rng);
      LossDraws draws = model.draw(batch.x, batch.yhat, false, rng);
      Bindings bind = loss_bindings(batch.x, nullptr, batch.yhat, draws);
      auto r = ug.eval(bind);
      if (!r.finite)
        throw std::runtime_error("LSNPC training diverged at epoch " + std::to_string(epoch) + ": " +
                                 read_terms(ug, ul, bind).breakdown());
      loss_sum += r.value.item();
      model.parameters().zero_grad();
      ug.backward();
      opt.step(cosine_annealed_lr(cfg.learning_rate,
                                  static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(n_batches),
                                  cfg.cosine_cycle));
    }
    model.epoch_losses.push_back(loss_sum / static_cast<double>(n_batches));

    if (!clean.empty() && epoch + cfg.clean_epochs >= cfg.epochs) {
      Rng clean_shuffle = make_rng(cfg.seed, streams::kModelTrain, kCleanShuffleSpace + epoch);
      std::shuffle(clean_order.begin(), clean_order.end(), clean_shuffle);
      for (std::size_t b = 0; b < n_clean_batches; ++b) {
        const std::size_t lo = b * cfg.batch_size, hi = std::min(clean_order.size(), lo + cfg.batch_size);
        Rng rng = make_rng(cfg.seed, streams::kModelTrain, kCleanSpace + (epoch << 20) + b);
        Batch batch = make_batch(clean.x, &clean.y, clean.base_probs, std::span(clean_order).subspan(lo, hi - lo),
                                 mc.samples_y, mc.samples_z, rng);
        LossDraws draws = model.draw(batch.x, batch.yhat, true, rng);
        Bindings bind = loss_bindings(batch.x, &batch.y, batch.yhat, draws);
        auto r = sg.eval(bind);
        if (!r.finite)
          throw std::runtime_error("LSNPC training diverged at epoch " + std::to_string(epoch) + " (clean phase): " +
                                   read_terms(sg, sl, bind).breakdown());
        model.parameters().zero_grad();
        sg.backward();
        opt.step(cosine_annealed_lr(
            cfg.learning_rate, static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(n_clean_batches),
            cfg.cosine_cycle));
      }
    }
    model.epochs_trained = epoch + 1;

    if (select) {
      auto res = correct(model, validation->base_probs, validation->x, ccfg);
      const double f1 = micro_f1(validation->y, res.labels);
      if (f1 > model.best_validation_micro_f1) {
        model.best_validation_micro_f1 = f1;
        model.best_epoch = epoch + 1;
        best = model.state();
      }
    }
  }
  if (select) model.load_state(best);
}

void save_model(const LsnpcModel& model, const std::string& path) {
  save_checkpoint(path, model.state());
  std::ostringstream meta;
  meta << model.config().manifest();
  io::write_text(path + ".hparams", meta.str());
}

LsnpcModel load_model(const std::string& path) {
  ModelConfig cfg = ModelConfig::parse_manifest(io::read_text(path + ".hparams"));
  LsnpcModel model(cfg, 0);
  model.load_state(load_checkpoint(path));
  return model;
}

}  // namespace lsnpc
