#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/datasets.hpp"
#include "hpl/envs.hpp"
#include "hpl/hindsight_vae.hpp"
#include "hpl/numcore.hpp"
#include "hpl/preference.hpp"

namespace hpl {

// ---------------------------------------------------------------------------
// Reward labeling

enum class MarginalMode { Exact, MonteCarlo };
std::string to_string(MarginalMode mode);
MarginalMode parse_marginal_mode(const std::string& name);

/// Prior codes beyond this count are not enumerated by default.
inline constexpr int kMaxEnumerableCodes = 64;

/// E_{z ~ f(z | s, a)} r(s, a, z): exact sum over the prior support, or the
/// mean over n prior samples drawn from `rng`.
double marginal_reward(const RewardModel& model, int s, int a, MarginalMode mode, int n = 20, Rng* rng = nullptr);

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s2 = 0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

struct LabelProvenance {
  std::string reward_id;  // oracle, markovian, hindsight, ensemble:<E>
  int samples = 0;        // prior samples per label, 0 when not applicable
  bool exact = true;

  bool operator==(const LabelProvenance&) const = default;
};

struct LabeledDataset {
  std::vector<Transition> transitions;
  LabelProvenance provenance;

  bool operator==(const LabeledDataset&) const = default;
};

/// Reward for every (s, a): rows are states, columns actions.
using RewardTable = Matrix;

/// Labels every step of every trajectory from a reward table. The last step
/// of a trajectory leads to final_state and is `done` only if the episode
/// entered a terminal state.
LabeledDataset label_from_table(const UnlabeledDataset& unlabeled, const RewardTable& table,
                                LabelProvenance provenance);

/// Markovian models read r(s, a) directly and ignore the mode; hindsight
/// models are marginalized over the VAE prior. Monte-Carlo labels draw a fresh
/// n-sample estimate for each (s, a) from a stream derived from `seed`.
RewardTable reward_table(const RewardModel& model, MarginalMode mode, int n, std::uint64_t seed);
RewardTable ensemble_table(std::span<const RewardModel> members);

LabeledDataset label_dataset(const UnlabeledDataset& unlabeled, const RewardModel& model, MarginalMode mode,
                             int n, std::uint64_t seed);
LabeledDataset label_ensemble(const UnlabeledDataset& unlabeled, std::span<const RewardModel> members);
/// Ground-truth rewards. Throws Error(MissingOracleRewards) when stripped.
LabeledDataset label_oracle(const UnlabeledDataset& unlabeled);

void save_labeled(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_labeled(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Policy learning

struct RlConfig {
  double discount = 0.99;
  double expectile = 0.75;
  double inverse_temperature = 0.333;
  double advantage_clip = 100.0;
  double soft_update = 0.005;
  int steps = 5000;
  int batch_size = 256;
  double learning_rate = 3e-4;
  int hidden_dim = 64;
  int hidden_layers = 2;
  Activation activation = Activation::Tanh;

  void validate() const;
  nlohmann::json to_json() const;
  static RlConfig from_json(const nlohmann::json& j);
};

/// Q(s, a), target Q, V(s) and a softmax policy over actions, each an MLP on
/// one-hot features.
class PolicyArtifacts {
 public:
  PolicyArtifacts(FeatureSpace features, const RlConfig& config, std::uint64_t init_seed);

  const FeatureSpace& features() const { return features_; }
  const RlConfig& config() const { return config_; }

  ParamStore& q_params() { return q_store_; }
  ParamStore& v_params() { return v_store_; }
  ParamStore& policy_params() { return pi_store_; }
  const ParamStore& policy_params() const { return pi_store_; }
  ParamStore& target_params() { return target_store_; }

  Vector q_values(std::span<const int> s, std::span<const int> a, bool target = false) const;
  Vector v_values(std::span<const int> s) const;
  /// Rows are states, columns action probabilities.
  TabularPolicy action_probs() const;
  Matrix q_table() const;
  Vector v_table() const;
  int greedy_action(int s) const;

  /// Loss pieces, exposed for gradient checks. Each accumulates gradients into
  /// its own network only.
  double value_loss(std::span<const Transition> batch, bool with_grad);
  double q_loss(std::span<const Transition> batch, bool with_grad);
  double policy_loss(std::span<const Transition> batch, bool with_grad);
  /// Weighted cross-entropy on (state, action, weight) samples.
  double cloning_loss(std::span<const int> s, std::span<const int> a, std::span<const double> w, bool with_grad);

  void sync_target();
  void update_target();

  nlohmann::json hyperparameters() const;
  void save(const std::filesystem::path& dir, std::uint64_t seed, const nlohmann::json& extra = {}) const;
  static PolicyArtifacts load(const std::filesystem::path& dir);

 private:
  Matrix state_input(std::span<const int> s) const;
  Matrix state_action_input(std::span<const int> s, std::span<const int> a) const;

  FeatureSpace features_;
  RlConfig config_;
  ParamStore q_store_, target_store_, v_store_, pi_store_;
  Mlp q_, target_, v_, pi_;
};

/// Asymmetric squared loss |tau - 1(u < 0)| * u^2.
double expectile_loss(double residual, double tau);
/// min(exp(advantage / inverse_temperature), clip).
double advantage_weight(double advantage, const RlConfig& config);

struct IqlResult {
  PolicyArtifacts policy;
  std::vector<double> value_losses, q_losses, policy_losses;
  /// Largest |Q| or |V| over all state(-action)s seen at periodic checks.
  double max_abs_value = 0.0;
};

/// Throws Error(NonFinite) with the step index when a loss or gradient goes
/// non-finite and Error(EmptyDataset) on an empty dataset.
IqlResult iql_train(const LabeledDataset& data, FeatureSpace features, const RlConfig& config, std::uint64_t seed);

struct SftConfig {
  int steps = 2000;
  int batch_size = 64;
  double learning_rate = 1e-3;

  void validate() const;
  nlohmann::json to_json() const;
  static SftConfig from_json(const nlohmann::json& j);
};

/// Behavior cloning on the preferred segment of each pair; neutral pairs add
/// both segments at half weight. Network sizes come from `rl`.
PolicyArtifacts sft_train(const PreferenceDataset& data, FeatureSpace features, const RlConfig& rl,
                          const SftConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalStats {
  double mean_return = 0.0;
  double std_return = 0.0;
  int episodes = 0;
  std::uint64_t seed = 0;
  /// Per visited state, the empirical action frequencies.
  std::map<int, std::vector<double>> action_frequencies;

  nlohmann::json to_json() const;
};

/// Seeded rollouts scored with ground-truth rewards.
EvalStats evaluate(const TabularPolicy& policy, const MDPSpec& mdp, int num_episodes, std::uint64_t seed);

}  // namespace hpl
