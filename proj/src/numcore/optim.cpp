#include <algorithm>
#include <cmath>

#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

void adam_step(ParamStore& store, const AdamConfig& config, long t) {
  if (t < 1) throw Error(ErrorCode::InvalidDimension, "Adam step index must be >= 1");
  store.check_finite_grads();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    e.m = config.beta1 * e.m + (1.0 - config.beta1) * e.grad;
    e.v = config.beta2 * e.v + (1.0 - config.beta2) * e.grad.cwiseAbs2();
    e.value.array() -= config.learning_rate * (e.m.array() / c1) /
                       ((e.v.array() / c2).sqrt() + config.eps);
  }
}

GradCheckReport grad_check(const LossFn& loss, ParamStore& store, double rel_tol,
                           double relative_step) {
  store.zero_grad();
  loss(store, true);
  std::vector<Matrix> analytic;
  for (const auto& e : store.entries()) analytic.push_back(e.grad);

  GradCheckReport report;
  auto entries = store.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Matrix& value = entries[i].value;
    Matrix numeric(value.rows(), value.cols());
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      const double orig = value.data()[k];
      const double h = relative_step * std::max(1.0, std::abs(orig));
      value.data()[k] = orig + h;
      const double up = loss(store, false);
      value.data()[k] = orig - h;
      const double down = loss(store, false);
      value.data()[k] = orig;
      numeric.data()[k] = (up - down) / (2.0 * h);
    }
    const double scale = std::max({analytic[i].cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-6});
    const double err = (analytic[i] - numeric).cwiseAbs().maxCoeff() / scale;
    report.entries.push_back({entries[i].name, err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.passed = report.max_rel_error <= rel_tol;
  return report;
}

}  // namespace hpl
