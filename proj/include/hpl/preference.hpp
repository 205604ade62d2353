#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/datasets.hpp"
#include "hpl/hindsight_vae.hpp"
#include "hpl/numcore.hpp"

namespace hpl {

enum class RewardKind { Markovian, Hindsight };
std::string to_string(RewardKind kind);
RewardKind parse_reward_kind(const std::string& name);

/// How per-step codes are chosen from the frozen encoder.
enum class LatentMode { PosteriorSample, PosteriorMode };
std::string to_string(LatentMode mode);
LatentMode parse_latent_mode(const std::string& name);

struct RewardConfig {
  int hidden_dim = 64;
  int hidden_layers = 2;
  Activation activation = Activation::Tanh;
  Activation final_activation = Activation::Identity;
  int steps = 2000;
  int batch_size = 64;  // pairs per step; the whole set when it is smaller
  double learning_rate = 3e-4;
  LatentMode latent_mode = LatentMode::PosteriorSample;

  void validate() const;
  nlohmann::json to_json() const;
  static RewardConfig from_json(const nlohmann::json& j);
};

/// Per-step reward r(s, a) or r(s, a, z). The hindsight kind reads
/// onehot(s) ++ onehot(a) ++ onehot(z) and keeps a handle to the frozen VAE.
class RewardModel {
 public:
  RewardModel(RewardKind kind, FeatureSpace features, const RewardConfig& config, std::uint64_t init_seed,
              std::shared_ptr<const VaeModel> vae = nullptr);

  RewardKind kind() const { return kind_; }
  const FeatureSpace& features() const { return features_; }
  const RewardConfig& config() const { return config_; }
  int num_codes() const { return num_codes_; }
  int input_dim() const { return features_.step_dim() + num_codes_; }
  const std::shared_ptr<const VaeModel>& vae() const { return vae_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// Markovian only. Throws Error(KindMismatch) otherwise.
  double reward(int s, int a) const;
  /// Hindsight only.
  double reward(int s, int a, int code) const;
  /// r(s, a, z) for every code z.
  RowVector reward_per_code(int s, int a) const;
  /// Batched rewards for rows built by encode_input.
  Vector forward(const Matrix& input, Mlp::Cache* cache = nullptr) const;
  void backward(const Mlp::Cache& cache, const Vector& grad_out);
  /// Writes the input features of one step; `code` is ignored for the
  /// markovian kind.
  template <class Row>
  void encode_input(Row&& row, int s, int a, int code) const {
    features_.check(s, a);
    row.setZero();
    features_.encode_step(row, s, a);
    if (kind_ == RewardKind::Hindsight) row(features_.step_dim() + code) = 1.0;
  }

  nlohmann::json hyperparameters() const;
  void save(const std::filesystem::path& dir, std::uint64_t seed) const;
  /// A hindsight checkpoint needs the VAE it was trained with.
  static RewardModel load(const std::filesystem::path& dir, std::shared_ptr<const VaeModel> vae = nullptr);

 private:
  RewardKind kind_;
  FeatureSpace features_;
  RewardConfig config_;
  int num_codes_ = 0;
  std::shared_ptr<const VaeModel> vae_;
  ParamStore store_;
  Mlp net_;
};

/// P(seg0 > seg1) = exp(rho0) / (exp(rho0) + exp(rho1)), in log space.
double bt_prob(double rho0, double rho1);

/// Sum of r(s, a) over the segment.
double strength_mr(const RewardModel& model, const Segment& segment);
/// Sum of r(s_t, a_t, z_t) with z_t drawn from (or the mode of) the encoder
/// posterior of the clipped future window. `rng` is required for sampling.
double strength_hpm(const RewardModel& model, const Segment& segment, LatentMode mode, Rng* rng = nullptr);
/// Dispatches on the model kind.
double strength(const RewardModel& model, const Segment& segment, LatentMode mode, Rng* rng = nullptr);

/// A pair with its reward-model input rows fixed, so the loss is a plain
/// function of the parameters.
struct EncodedPair {
  Matrix input0;
  Matrix input1;
  double label = 0.0;
};

/// Posterior code probabilities per step of each segment, computed once from a
/// frozen VAE.
struct PosteriorCache {
  std::vector<Matrix> seg0;  // steps x K
  std::vector<Matrix> seg1;
};
PosteriorCache compute_posteriors(const VaeModel& vae, std::span<const PreferencePair> pairs);

/// Builds input rows; hindsight models need `posteriors` (and `rng` for
/// sampling mode).
std::vector<EncodedPair> encode_pairs(const RewardModel& model, std::span<const PreferencePair> pairs,
                                      const PosteriorCache* posteriors, LatentMode mode, Rng* rng);
EncodedPair encode_pair(const RewardModel& model, const PreferencePair& pair, const Matrix* post0,
                        const Matrix* post1, LatentMode mode, Rng* rng);

/// Mean of -[(1 - y) log P(seg0 > seg1) + y log P(seg1 > seg0)].
double pref_loss(RewardModel& model, std::span<const EncodedPair> batch, bool with_grad);

/// Fraction of non-neutral pairs where the predicted probability favors the
/// labeled winner. NaN when every pair is neutral.
double preference_accuracy(const RewardModel& model, std::span<const EncodedPair> pairs);

struct RewardDiagnostics {
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct RewardTrainResult {
  RewardModel model;
  RewardDiagnostics diagnostics;
};

/// Adam on pref_loss. Diagnostics use posterior-mode codes for the hindsight
/// kind. Parameters are rounded to float32 on return.
RewardTrainResult train_reward(const PreferenceDataset& dataset, RewardKind kind, FeatureSpace features,
                               std::shared_ptr<const VaeModel> vae, const RewardConfig& config,
                               std::uint64_t seed);

/// Markovian members; member 0 uses `seed` itself, member i > 0 a derived seed.
std::vector<RewardTrainResult> train_reward_ensemble(const PreferenceDataset& dataset, FeatureSpace features,
                                                     int ensemble_size, const RewardConfig& config,
                                                     std::uint64_t seed);

/// Mean of member outputs r(s, a).
double ensemble_reward(std::span<const RewardModel> members, int s, int a);

}  // namespace hpl
