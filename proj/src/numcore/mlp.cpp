#include "activation.hpp"
#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes, Activation hidden,
         Activation final, Rng& rng)
    : sizes_(std::move(sizes)), hidden_(hidden), final_(final) {
  if (sizes_.size() < 2) throw Error(ErrorCode::ShapeMismatch, "MLP needs at least in/out sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::string tag = prefix + "/l" + std::to_string(l);
    weights_.push_back(store.add_uniform(tag + "/w", sizes_[l], sizes_[l + 1], sizes_[l], rng));
    biases_.push_back(store.add(tag + "/b", 1, sizes_[l + 1]));
  }
}

Matrix Mlp::forward(const ParamStore& store, const Matrix& input, Cache* cache) const {
  if (input.cols() != input_dim())
    throw Error(ErrorCode::ShapeMismatch, "MLP expects " + std::to_string(input_dim()) +
                                              " input features, got " + std::to_string(input.cols()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix x = input;
  const std::size_t layers = weights_.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix pre = x * store.value(weights_[l]);
    pre.rowwise() += store.value(biases_[l]).row(0);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(pre);
    }
    detail::activate_inplace(pre, l + 1 == layers ? final_ : hidden_);
    x = std::move(pre);
  }
  return x;
}

Matrix Mlp::backward(ParamStore& store, const Cache& cache, const Matrix& grad_out) const {
  Matrix g = grad_out;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const Activation act = l + 1 == weights_.size() ? final_ : hidden_;
    if (act != Activation::Identity) {
      Matrix out = cache.pre[l];
      detail::activate_inplace(out, act);
      g = detail::activation_backward(g, cache.pre[l], out, act);
    }
    store.grad(weights_[l]).noalias() += cache.inputs[l].transpose() * g;
    store.grad(biases_[l]).row(0) += g.colwise().sum();
    g = g * store.value(weights_[l]).transpose();
  }
  return g;
}

Matrix mlp_forward(const ParamStore& store, const Mlp& mlp, const Matrix& input) {
  return mlp.forward(store, input);
}

}  // namespace hpl
