#pragma once

#include "hpl/numcore.hpp"

namespace hpl::detail {

inline void activate_inplace(Matrix& m, Activation act) {
  switch (act) {
    case Activation::Identity: break;
    case Activation::Relu: m = m.cwiseMax(0.0); break;
    case Activation::Tanh: m = m.array().tanh().matrix(); break;
  }
}

/// grad * act'(pre); `out` is act(pre).
inline Matrix activation_backward(const Matrix& grad, const Matrix& pre, const Matrix& out,
                                  Activation act) {
  switch (act) {
    case Activation::Identity: return grad;
    case Activation::Relu: return (pre.array() > 0.0).select(grad, 0.0);
    case Activation::Tanh: return (grad.array() * (1.0 - out.array().square())).matrix();
  }
  return grad;
}

}  // namespace hpl::detail
