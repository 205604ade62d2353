#include <cmath>

#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

RowVector log_softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

RowVector softmax(const RowVector& logits) { return log_softmax(logits).array().exp().matrix(); }

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.row(r) = log_softmax(logits.row(r));
  return out;
}

CategoricalDist::CategoricalDist(RowVector logits)
    : logits_(std::move(logits)), log_probs_(log_softmax(logits_)) {}

int CategoricalDist::mode() const {
  Eigen::Index best = 0;
  log_probs_.maxCoeff(&best);
  return static_cast<int>(best);
}

int CategoricalDist::sample(Rng& rng) const {
  const RowVector p = probs();
  return static_cast<int>(rng.categorical(std::span<const double>(p.data(), p.size())));
}

double categorical_kl(std::span<const double> q, std::span<const double> f) {
  if (q.size() != f.size()) throw Error(ErrorCode::ShapeMismatch, "KL over different supports");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    kl += q[i] * (std::log(q[i]) - std::log(f[i]));
  }
  return kl;
}

double categorical_kl(const CategoricalDist& q, const CategoricalDist& f) {
  if (q.num_classes() != f.num_classes())
    throw Error(ErrorCode::ShapeMismatch, "KL over different supports");
  const RowVector pq = q.probs();
  return (pq.array() * (q.log_probs() - f.log_probs()).array()).sum();
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_sigmoid(double x) { return -softplus(-x); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace hpl
