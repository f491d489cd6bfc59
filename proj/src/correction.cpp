#include "lsnpc/correction.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace lsnpc {

void CorrectionConfig::validate() const {
  if (samples_y == 0 || samples_zhat == 0 || samples_z == 0)
    throw std::invalid_argument("correction: sample counts must be at least 1");
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("correction: threshold must lie in (0, 1)");
  if (chunk_rows == 0) throw std::invalid_argument("correction: chunk size must be positive");
}

CorrectionResult correct(const LsnpcModel& model, const ProbMatrix& base_probs, const FeatureMatrix& x,
                         const CorrectionConfig& cfg) {
  cfg.validate();
  const auto& mc = model.config();
  if (x.cols() != mc.d) throw std::invalid_argument("correct: feature dimension differs from model");
  if (base_probs.rows() != x.rows() || base_probs.cols() != mc.k)
    throw std::invalid_argument("correct: base probabilities do not match features/model");

  const std::size_t n = x.rows(), k = mc.k, m = mc.m, d = mc.d;
  const std::size_t sy = cfg.samples_y, szh = cfg.samples_zhat, sz = cfg.samples_z, chains = cfg.chains();
  const bool student = mc.proposal == ProposalFamily::Student;
  const bool shared = mc.coupling == StudentCoupling::Shared;
  CorrectionResult out{ProbMatrix(n, k), LabelMatrix(n, k), ProbMatrix(n, k)};
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (std::size_t lo = 0; lo < n; lo += cfg.chunk_rows) {
    const std::size_t hi = std::min(n, lo + cfg.chunk_rows), rows = hi - lo;
    std::vector<Rng> rngs;
    rngs.reserve(rows);
    for (std::size_t i = lo; i < hi; ++i) rngs.push_back(make_rng(cfg.seed, streams::kCorrect, i));

    // yhat ~ p_h(. | x)
    const std::size_t r1 = rows * sy;
    Tensor x1(Shape{r1, d}), yhat(Shape{r1, k});
    for (std::size_t i = 0; i < rows; ++i) {
      auto xr = x.row(lo + i);
      auto pr = base_probs.row(lo + i);
      for (std::size_t s = 0; s < sy; ++s) {
        const std::size_t r = i * sy + s;
        for (std::size_t c = 0; c < d; ++c) x1(r, c) = xr[c];
        for (std::size_t c = 0; c < k; ++c) yhat(r, c) = unif(rngs[i]) < pr[c] ? 1.0 : 0.0;
      }
    }
    const LatentParams q_zhat = model.encode_xy(x1, yhat);
    Tensor nu;
    if (student && mc.nu_mode == NuMode::Learned) nu = model.learned_nu(x1, yhat);

    // zhat ~ q(zhat | x, yhat)
    const std::size_t r2 = r1 * szh;
    Tensor zhat(Shape{r2, m});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t s = 0; s < sy; ++s) {
        const std::size_t src = i * sy + s;
        const double dof = nu.rows() == r1 ? nu(src, 0) : mc.nu;
        for (std::size_t t = 0; t < szh; ++t) {
          const std::size_t r = src * szh + t;
          std::vector<double> eps(m);
          for (auto& e : eps) e = normal(rngs[i]);
          std::vector<double> w(shared ? 1 : m, 1.0);
          if (student)
            for (auto& v : w) v = std::sqrt(dof / draw_chi_squared(rngs[i], dof));
          for (std::size_t c = 0; c < m; ++c)
            zhat(r, c) = q_zhat.mean(src, c) + q_zhat.scale(src, c) * eps[c] * w[shared ? 0 : c];
        }
      }
    const LatentParams q_z = model.encode_zhat_to_z(zhat);

    // z ~ q(z | zhat)
    const std::size_t r3 = r2 * sz;
    Tensor z(Shape{r3, m}), x3(Shape{r3, d});
    for (std::size_t i = 0; i < rows; ++i) {
      auto xr = x.row(lo + i);
      for (std::size_t j = 0; j < sy * szh; ++j) {
        const std::size_t src = i * sy * szh + j;
        for (std::size_t t = 0; t < sz; ++t) {
          const std::size_t r = src * sz + t;
          for (std::size_t c = 0; c < m; ++c) z(r, c) = q_z.mean(src, c) + q_z.scale(src, c) * normal(rngs[i]);
          for (std::size_t c = 0; c < d; ++c) x3(r, c) = xr[c];
        }
      }
    }
    const Tensor probs = model.decode_labels(x3, z);

    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        double s = 0, ss = 0;
        for (std::size_t j = 0; j < chains; ++j) s += probs(i * chains + j, c);
        const double mean = s / static_cast<double>(chains);
        for (std::size_t j = 0; j < chains; ++j) {
          const double dv = probs(i * chains + j, c) - mean;
          ss += dv * dv;
        }
        out.probs(lo + i, c) = mean;
        out.std_error(lo + i, c) =
            chains > 1 ? std::sqrt(ss / static_cast<double>(chains - 1) / static_cast<double>(chains)) : 0.0;
      }
  }
  out.labels = binarize(out.probs, cfg.threshold);
  return out;
}

CorrectionResult correct(const LsnpcModel& model, const BaseClassifier& h, const FeatureMatrix& x,
                         const CorrectionConfig& cfg) {
  if (h.input_dim() != model.config().d || h.label_count() != model.config().k)
    throw std::invalid_argument("correct: classifier and model dimensions differ");
  return correct(model, h.predict_probs(x), x, cfg);
}

LabelMatrix knn_correct(const FeatureMatrix& train_x, const LabelMatrix& noisy_train_y, const FeatureMatrix& x,
                        std::size_t K) {
  if (K == 0) throw std::invalid_argument("knn: K must be at least 1");
  if (K > train_x.rows())
    throw std::invalid_argument("knn: K=" + std::to_string(K) + " exceeds training size " +
                                std::to_string(train_x.rows()));
  if (train_x.rows() != noisy_train_y.rows()) throw std::invalid_argument("knn: training rows differ");
  if (x.cols() != train_x.cols()) throw std::invalid_argument("knn: feature dimensions differ");

  const std::size_t n = train_x.rows(), k = noisy_train_y.cols();
  LabelMatrix out(x.rows(), k);
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t q = 0; q < x.rows(); ++q) {
    auto xq = x.row(q);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = train_x.row(i);
      double s = 0;
      for (std::size_t c = 0; c < xq.size(); ++c) {
        const double dv = static_cast<double>(xq[c]) - static_cast<double>(xi[c]);
        s += dv * dv;
      }
      dist[i] = {s, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(K), dist.end());
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t votes = 0;
      for (std::size_t j = 0; j < K; ++j) votes += noisy_train_y(dist[j].second, c);
      out(q, c) = 2 * votes >= K ? 1 : 0;
    }
  }
  return out;
}

std::string correction_csv(const CorrectionResult& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t r = 0; r < result.probs.rows(); ++r) {
    for (std::size_t c = 0; c < result.probs.cols(); ++c) os << (c ? "," : "") << result.probs(r, c);
    os << '\n';
  }
  for (std::size_t r = 0; r < result.labels.rows(); ++r) {
    for (std::size_t c = 0; c < result.labels.cols(); ++c) os << (c ? "," : "") << int(result.labels(r, c));
    os << '\n';
  }
  return os.str();
}

}  // namespace lsnpc
