#include <cmath>
#include <limits>

#include "activation.hpp"
#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

AnticausalEncoder::AnticausalEncoder(ParamStore& store, const std::string& prefix,
                                     EncoderConfig config, Rng& rng)
    : config_(config) {
  if (config_.input_dim < 1 || config_.embed_dim < 1 || config_.num_layers < 1 ||
      config_.ffn_dim < 1 || config_.max_len < 1)
    throw Error(ErrorCode::ShapeMismatch, "invalid encoder configuration");
  const int d = config_.embed_dim;
  embed_ = store.add_uniform(prefix + "/embed", config_.input_dim, d, config_.input_dim, rng);
  position_ = store.add_uniform(prefix + "/position", config_.max_len, d, d, rng);
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string tag = prefix + "/block" + std::to_string(l);
    Block b;
    b.wq = store.add_uniform(tag + "/wq", d, d, d, rng);
    b.wk = store.add_uniform(tag + "/wk", d, d, d, rng);
    b.wv = store.add_uniform(tag + "/wv", d, d, d, rng);
    b.wo = store.add_uniform(tag + "/wo", d, d, d, rng);
    b.bo = store.add(tag + "/bo", 1, d);
    b.w1 = store.add_uniform(tag + "/w1", d, config_.ffn_dim, d, rng);
    b.b1 = store.add(tag + "/b1", 1, config_.ffn_dim);
    b.w2 = store.add_uniform(tag + "/w2", config_.ffn_dim, d, config_.ffn_dim, rng);
    b.b2 = store.add(tag + "/b2", 1, d);
    blocks_.push_back(b);
  }
}

namespace {

bool allowed(int i, int j, int window) { return j >= i && (window < 0 || j <= i + window); }

/// Masked row-softmax attention weights for one sequence.
Matrix attention_weights(const Matrix& q, const Matrix& k, double scale, int window) {
  const Eigen::Index L = q.rows();
  Matrix scores = (q * k.transpose()) * scale;
  Matrix w = Matrix::Zero(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = i; j < L; ++j)
      if (allowed(static_cast<int>(i), static_cast<int>(j), window)) m = std::max(m, scores(i, j));
    double total = 0.0;
    for (Eigen::Index j = i; j < L; ++j) {
      if (!allowed(static_cast<int>(i), static_cast<int>(j), window)) continue;
      w(i, j) = std::exp(scores(i, j) - m);
      total += w(i, j);
    }
    w.row(i) /= total;
  }
  return w;
}

}  // namespace

Matrix AnticausalEncoder::forward(const ParamStore& store, const Matrix& tokens,
                                  std::span<const int> lengths, int window, Cache* cache) const {
  if (tokens.cols() != config_.input_dim)
    throw Error(ErrorCode::ShapeMismatch, "encoder token width mismatch");
  Eigen::Index total = 0;
  for (int len : lengths) {
    if (len < 1) throw Error(ErrorCode::EmptySequence, "encoder received an empty sequence");
    if (len > config_.max_len)
      throw Error(ErrorCode::ShapeMismatch, "sequence longer than encoder max_len");
    total += len;
  }
  if (total != tokens.rows()) throw Error(ErrorCode::ShapeMismatch, "lengths do not cover tokens");
  if (lengths.empty()) throw Error(ErrorCode::EmptySequence, "encoder received no sequences");

  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  Matrix x = tokens * store.value(embed_);
  {
    const Matrix& pos = store.value(position_);
    Eigen::Index row = 0;
    for (int len : lengths)
      for (int t = 0; t < len; ++t) x.row(row++) += pos.row(t);
  }
  if (cache) {
    *cache = Cache{};
    cache->lengths.assign(lengths.begin(), lengths.end());
    cache->window = window;
    cache->tokens = tokens;
  }

  for (const Block& b : blocks_) {
    Matrix q = x * store.value(b.wq);
    Matrix k = x * store.value(b.wk);
    Matrix v = x * store.value(b.wv);
    Matrix ctx(x.rows(), x.cols());
    std::vector<Matrix> attn;
    attn.reserve(lengths.size());
    Eigen::Index off = 0;
    for (int len : lengths) {
      Matrix w = attention_weights(q.middleRows(off, len), k.middleRows(off, len), scale, window);
      ctx.middleRows(off, len).noalias() = w * v.middleRows(off, len);
      attn.push_back(std::move(w));
      off += len;
    }
    Matrix y = x + ctx * store.value(b.wo);
    y.rowwise() += store.value(b.bo).row(0);
    Matrix hidden_pre = y * store.value(b.w1);
    hidden_pre.rowwise() += store.value(b.b1).row(0);
    Matrix hidden = hidden_pre;
    detail::activate_inplace(hidden, config_.activation);
    Matrix out = y + hidden * store.value(b.w2);
    out.rowwise() += store.value(b.b2).row(0);
    if (cache) {
      cache->x.push_back(std::move(x));
      cache->q.push_back(std::move(q));
      cache->k.push_back(std::move(k));
      cache->v.push_back(std::move(v));
      cache->ctx.push_back(std::move(ctx));
      cache->y.push_back(std::move(y));
      cache->hidden_pre.push_back(std::move(hidden_pre));
      cache->attn.push_back(std::move(attn));
    }
    x = std::move(out);
  }
  return x;
}

void AnticausalEncoder::backward(ParamStore& store, const Cache& cache, const Matrix& grad_out) const {
  const double scale = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  Matrix g = grad_out;
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const Block& b = blocks_[l];
    const Matrix& x = cache.x[l];
    const Matrix& y = cache.y[l];
    const Matrix& hidden_pre = cache.hidden_pre[l];
    Matrix hidden = hidden_pre;
    detail::activate_inplace(hidden, config_.activation);

    // Feed-forward branch.
    Matrix dy = g;
    store.grad(b.w2).noalias() += hidden.transpose() * g;
    store.grad(b.b2).row(0) += g.colwise().sum();
    Matrix dhidden = g * store.value(b.w2).transpose();
    Matrix dpre = detail::activation_backward(dhidden, hidden_pre, hidden, config_.activation);
    store.grad(b.w1).noalias() += y.transpose() * dpre;
    store.grad(b.b1).row(0) += dpre.colwise().sum();
    dy.noalias() += dpre * store.value(b.w1).transpose();

    // Attention branch.
    store.grad(b.wo).noalias() += cache.ctx[l].transpose() * dy;
    store.grad(b.bo).row(0) += dy.colwise().sum();
    const Matrix dctx = dy * store.value(b.wo).transpose();
    Matrix dq = Matrix::Zero(x.rows(), x.cols());
    Matrix dk = Matrix::Zero(x.rows(), x.cols());
    Matrix dv = Matrix::Zero(x.rows(), x.cols());
    Eigen::Index off = 0;
    for (std::size_t s = 0; s < cache.lengths.size(); ++s) {
      const int len = cache.lengths[s];
      const Matrix& w = cache.attn[l][s];
      const auto dctx_s = dctx.middleRows(off, len);
      const Matrix dw = dctx_s * cache.v[l].middleRows(off, len).transpose();
      dv.middleRows(off, len).noalias() = w.transpose() * dctx_s;
      const Eigen::VectorXd row_dot = (w.array() * dw.array()).rowwise().sum();
      Matrix dscores = (w.array() * (dw.colwise() - row_dot).array()).matrix() * scale;
      dq.middleRows(off, len).noalias() = dscores * cache.k[l].middleRows(off, len);
      dk.middleRows(off, len).noalias() = dscores.transpose() * cache.q[l].middleRows(off, len);
      off += len;
    }
    store.grad(b.wq).noalias() += x.transpose() * dq;
    store.grad(b.wk).noalias() += x.transpose() * dk;
    store.grad(b.wv).noalias() += x.transpose() * dv;
    Matrix dx = dy;
    dx.noalias() += dq * store.value(b.wq).transpose();
    dx.noalias() += dk * store.value(b.wk).transpose();
    dx.noalias() += dv * store.value(b.wv).transpose();
    g = std::move(dx);
  }
  store.grad(embed_).noalias() += cache.tokens.transpose() * g;
  Matrix& dpos = store.grad(position_);
  Eigen::Index row = 0;
  for (int len : cache.lengths)
    for (int t = 0; t < len; ++t) dpos.row(t) += g.row(row++);
}

Matrix anticausal_encode(const ParamStore& store, const AnticausalEncoder& encoder,
                         const Matrix& tokens, int window_k) {
  if (tokens.rows() == 0) throw Error(ErrorCode::EmptySequence, "empty token sequence");
  const int len = static_cast<int>(tokens.rows());
  return encoder.forward(store, tokens, std::span<const int>(&len, 1), window_k);
}

}  // namespace hpl
