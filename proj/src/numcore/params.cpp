#include <cmath>

#include "hpl/error.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

std::string to_string(Activation act) {
  switch (act) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCode::Config, "unknown activation: " + name);
}

ParamId ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter name: " + name);
  Entry e;
  e.name = std::move(name);
  e.value = Matrix::Zero(rows, cols);
  e.grad = Matrix::Zero(rows, cols);
  e.m = Matrix::Zero(rows, cols);
  e.v = Matrix::Zero(rows, cols);
  entries_.push_back(std::move(e));
  return ParamId{entries_.size() - 1};
}

ParamId ParamStore::add_uniform(std::string name, Eigen::Index rows, Eigen::Index cols, int fan_in,
                                Rng& rng) {
  const ParamId id = add(std::move(name), rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  Matrix& w = value(id);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) w(r, c) = rng.uniform(-bound, bound);
  return id;
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return ParamId{i};
  return std::nullopt;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

void ParamStore::check_finite_values() const {
  for (const auto& e : entries_)
    if (!e.value.allFinite()) throw Error(ErrorCode::NonFinite, "parameter " + e.name);
}

void ParamStore::check_finite_grads() const {
  for (const auto& e : entries_)
    if (!e.grad.allFinite()) throw Error(ErrorCode::NonFinite, "gradient of " + e.name);
}

void ParamStore::round_to_float() {
  for (auto& e : entries_) e.value = e.value.cast<float>().cast<double>();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.entries_.size() != entries_.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter stores differ in layout");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].value.rows() != other.entries_[i].value.rows() ||
        entries_[i].value.cols() != other.entries_[i].value.cols())
      throw Error(ErrorCode::ShapeMismatch, "shape mismatch for " + entries_[i].name);
    entries_[i].value = other.entries_[i].value;
  }
}

void ParamStore::soft_update_from(const ParamStore& source, double rate) {
  if (source.entries_.size() != entries_.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter stores differ in layout");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    entries_[i].value = (1.0 - rate) * entries_[i].value + rate * source.entries_[i].value;
}

}  // namespace hpl
