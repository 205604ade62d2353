#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hpl/rng.hpp"

namespace hpl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { Identity, Relu, Tanh };

std::string to_string(Activation act);
Activation parse_activation(const std::string& name);

// ---------------------------------------------------------------------------
// Parameters

struct ParamId {
  std::size_t index = 0;
};

/// Named parameter arrays with matching gradient accumulators and Adam
/// moment buffers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
  };

  ParamId add(std::string name, Eigen::Index rows, Eigen::Index cols);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  ParamId add_uniform(std::string name, Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng);

  Matrix& value(ParamId id) { return entries_[id.index].value; }
  const Matrix& value(ParamId id) const { return entries_[id.index].value; }
  Matrix& grad(ParamId id) { return entries_[id.index].grad; }
  const Matrix& grad(ParamId id) const { return entries_[id.index].grad; }

  std::optional<ParamId> find(const std::string& name) const;
  std::span<Entry> entries() { return entries_; }
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t num_scalars() const;

  void zero_grad();
  /// Throws Error(NonFinite) naming the first array holding NaN/Inf.
  void check_finite_values() const;
  void check_finite_grads() const;
  /// Round every value to float32 precision so that a checkpoint round trip
  /// reproduces the model exactly.
  void round_to_float();
  /// Copy values (not optimizer state) from a store with identical layout.
  void copy_values_from(const ParamStore& other);
  /// Polyak averaging: this = (1 - rate) * this + rate * source.
  void soft_update_from(const ParamStore& source, double rate);

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Multilayer perceptron (rows are batch items)

class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  /// sizes = {in, hidden..., out}.
  Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes, Activation hidden,
      Activation final, Rng& rng);

  Matrix forward(const ParamStore& store, const Matrix& input, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `store`, returns d loss / d input.
  Matrix backward(ParamStore& store, const Cache& cache, const Matrix& grad_out) const;

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation final_activation() const { return final_; }

 private:
  std::vector<int> sizes_;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
  Activation hidden_ = Activation::Tanh;
  Activation final_ = Activation::Identity;
};

/// Free-function form of Mlp::forward; throws Error(ShapeMismatch) on bad
/// input width.
Matrix mlp_forward(const ParamStore& store, const Mlp& mlp, const Matrix& input);

// ---------------------------------------------------------------------------
// Anti-causal self-attention encoder

struct EncoderConfig {
  int input_dim = 0;
  int embed_dim = 32;
  int num_layers = 1;
  int ffn_dim = 64;
  int max_len = 1;
  Activation activation = Activation::Tanh;
};

/// Stack of single-head attention blocks in which position t attends to
/// positions t..t+window (window < 0: to every position >= t). Each block is
/// y = x + Attn(x) W_o;  out = y + FFN(y). Inputs are several sequences
/// stacked row-wise; `lengths` gives the row count of each.
///
/// With more than one layer the receptive field of position t grows to
/// t..t+layers*window.
class AnticausalEncoder {
 public:
  struct Cache {
    std::vector<int> lengths;
    int window = -1;
    Matrix tokens;
    std::vector<Matrix> x;     // block inputs
    std::vector<Matrix> q, k, v, ctx, y, hidden_pre;
    std::vector<std::vector<Matrix>> attn;  // per layer, per sequence
  };

  AnticausalEncoder() = default;
  AnticausalEncoder(ParamStore& store, const std::string& prefix, EncoderConfig config, Rng& rng);

  Matrix forward(const ParamStore& store, const Matrix& tokens, std::span<const int> lengths,
                 int window, Cache* cache = nullptr) const;
  void backward(ParamStore& store, const Cache& cache, const Matrix& grad_out) const;

  const EncoderConfig& config() const { return config_; }

 private:
  struct Block {
    ParamId wq, wk, wv, wo, bo, w1, b1, w2, b2;
  };
  EncoderConfig config_;
  ParamId embed_;
  ParamId position_;
  std::vector<Block> blocks_;
};

/// Per-step embeddings of a single sequence. Throws Error(EmptySequence).
Matrix anticausal_encode(const ParamStore& store, const AnticausalEncoder& encoder,
                         const Matrix& tokens, int window_k);

// ---------------------------------------------------------------------------
// Categorical utilities

/// Numerically stable log-softmax of one row.
RowVector log_softmax(const RowVector& logits);
RowVector softmax(const RowVector& logits);
/// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

class CategoricalDist {
 public:
  CategoricalDist() = default;
  explicit CategoricalDist(RowVector logits);

  const RowVector& logits() const { return logits_; }
  const RowVector& log_probs() const { return log_probs_; }
  RowVector probs() const { return log_probs_.array().exp(); }
  int num_classes() const { return static_cast<int>(logits_.size()); }
  int mode() const;
  int sample(Rng& rng) const;

 private:
  RowVector logits_;
  RowVector log_probs_;
};

/// KL(q || f) = sum_i q_i (log q_i - log f_i) with 0 log 0 = 0.
double categorical_kl(std::span<const double> q, std::span<const double> f);
double categorical_kl(const CategoricalDist& q, const CategoricalDist& f);

/// softplus(x) = log(1 + exp(x)), stable for large |x|.
double softplus(double x);
double log_sigmoid(double x);
double sigmoid(double x);

// ---------------------------------------------------------------------------
// Optimization

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every array in `store` at step t >= 1, using
/// the gradients currently held in the store. Throws Error(NonFinite) if any
/// gradient is NaN/Inf (parameters are left untouched).
void adam_step(ParamStore& store, const AdamConfig& config, long t);

/// Loss closure for gradient checking. When `with_grad` is true it must
/// accumulate analytic gradients into the store (grads are zeroed by the
/// caller).
using LossFn = std::function<double(ParamStore&, bool with_grad)>;

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_error = 0.0;
  };
  std::vector<Entry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Central finite differences with step 1e-5 * max(1, |p|). The error of an
/// array is max_i |analytic_i - numeric_i| / max(max_i |analytic_i|,
/// max_i |numeric_i|, 1e-6). The floor keeps arrays whose true gradient is
/// zero (e.g. an output bias under a shift-invariant loss) from comparing
/// rounding noise against rounding noise.
GradCheckReport grad_check(const LossFn& loss, ParamStore& store, double rel_tol,
                           double relative_step = 1e-5);

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json + one little-endian float32 blob per array.

void save_checkpoint(const std::filesystem::path& dir, std::span<const ParamStore* const> stores,
                     const nlohmann::json& hyperparameters, std::uint64_t seed);
/// Loads values into stores whose layout was rebuilt from the manifest's
/// hyperparameters. Returns the manifest.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, std::span<ParamStore* const> stores);
nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace hpl
