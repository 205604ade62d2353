#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/datasets.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

/// One-hot featurization of discrete states and actions.
struct FeatureSpace {
  int num_states = 0;
  int num_actions = 0;

  int step_dim() const { return num_states + num_actions; }
  /// Writes onehot(s) ++ onehot(a) into `row` starting at column `offset`.
  template <class Row>
  void encode_step(Row&& row, int s, int a, Eigen::Index offset = 0) const {
    row(offset + s) = 1.0;
    row(offset + num_states + a) = 1.0;
  }
  void check(int s, int a) const;
  bool operator==(const FeatureSpace&) const = default;
};

/// Read-only view of a (state, action) sequence.
struct StepView {
  std::span<const int> states;
  std::span<const int> actions;

  StepView(std::span<const int> s, std::span<const int> a) : states(s), actions(a) {}
  StepView(const Segment& seg) : states(seg.states), actions(seg.actions) {}
  StepView(const Trajectory& traj) : states(traj.states), actions(traj.actions) {}
  int length() const { return static_cast<int>(actions.size()); }
};

struct VaeConfig {
  int future_length = 5;  // k
  int num_codes = 16;     // K
  double kl_coef = 0.1;
  int embed_dim = 32;
  int num_layers = 1;
  int ffn_dim = 64;
  int hidden_dim = 64;
  int hidden_layers = 2;
  Activation activation = Activation::Tanh;
  int steps = 5000;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double temperature_start = 1.0;
  double temperature_end = 0.3;

  void validate() const;
  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

/// Training example: position t of a sequence. The future window is
/// positions t .. min(t + k, length - 1).
struct VaeItem {
  StepView sequence;
  int t = 0;
};

struct DecodedStep {
  RowVector state_probs;
  RowVector action_probs;
};

/// Conditional VAE over future windows: encoder q(z | s_t, a_t, window),
/// decoder p(s_{t+dt}, a_{t+dt} | s_t, a_t, z, dt) and prior f(z | s_t, a_t).
class VaeModel {
 public:
  VaeModel(FeatureSpace features, VaeConfig config, std::uint64_t init_seed);

  const FeatureSpace& features() const { return features_; }
  const VaeConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Posterior over the code for position t. Throws Error(IndexOutOfRange).
  CategoricalDist encode(StepView sequence, int t) const;
  /// Posteriors for every position of the sequence in one batched pass.
  std::vector<CategoricalDist> encode_all(StepView sequence) const;

  CategoricalDist prior(int s, int a) const;
  /// Prior probabilities for every code: (codes 0..K-1, probabilities).
  RowVector enumerate_prior(int s, int a) const;
  std::vector<int> sample_prior(int s, int a, int n, Rng& rng) const;

  /// Throws Error(DeltaOutOfRange) unless 0 <= delta_t <= k.
  DecodedStep decode(int s, int a, int code, int delta_t) const;
  /// All offsets 0..k in one batched forward pass.
  std::vector<DecodedStep> decode_all(int s, int a, int code) const;

  /// Mean over items of [sum over offsets of state+action cross-entropy] +
  /// kl_coef * KL(q || f), using relaxed one-hot codes
  /// softmax((logits_q + noise) / temperature). `gumbel_noise` is items x K.
  /// Accumulates gradients into params() when `with_grad` is set.
  double elbo_loss(std::span<const VaeItem> batch, const Matrix& gumbel_noise, double temperature,
                   bool with_grad);
  /// Mean KL(q || f) over the batch (diagnostic, no gradient).
  double mean_kl(std::span<const VaeItem> batch) const;

  nlohmann::json hyperparameters() const;
  void save(const std::filesystem::path& dir, std::uint64_t seed,
            const std::string& dataset_hash) const;
  static VaeModel load(const std::filesystem::path& dir);

 private:
  Matrix posterior_logits(std::span<const VaeItem> items, AnticausalEncoder::Cache* cache,
                          Matrix* first_hidden) const;
  Matrix prior_input(std::span<const VaeItem> items) const;
  int window_length(const VaeItem& item) const;

  FeatureSpace features_;
  VaeConfig config_;
  ParamStore store_;
  AnticausalEncoder encoder_;
  ParamId head_w_, head_b_;
  Mlp decoder_;
  Mlp prior_;
};

struct VaeTrainResult {
  VaeModel model;
  std::vector<double> losses;
};

/// Adam on minibatches of positions drawn uniformly over (trajectory, t).
/// Deterministic given seed; parameters are rounded to float32 on return.
VaeTrainResult train_vae(const UnlabeledDataset& dataset, FeatureSpace features,
                         const VaeConfig& config, std::uint64_t seed);

/// SHA-256 of the learner view of a dataset in canonical JSONL form.
std::string dataset_hash(const UnlabeledDataset& dataset);

}  // namespace hpl
