#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/config.hpp"

namespace hpl {

/// Per-stage seeds, all derived from the master seed.
struct StageSeeds {
  std::uint64_t master = 0;
  std::uint64_t env = 0;
  std::uint64_t pref_data = 0;
  std::uint64_t annotate = 0;
  std::uint64_t unlabeled = 0;
  std::uint64_t vae = 0;
  std::uint64_t reward = 0;
  std::uint64_t label = 0;
  std::uint64_t rl = 0;
  std::uint64_t eval = 0;

  static StageSeeds derive(const ExperimentConfig& config);
  nlohmann::json to_json() const;
};

struct RunData {
  MDPSpec mdp;
  UnlabeledDataset unlabeled;  // with ground-truth rewards
  PreferenceDataset preferences;
};

struct RewardStage {
  std::vector<RewardModel> models;  // one, or the ensemble members
  std::vector<RewardDiagnostics> diagnostics;

  /// Labels for every (s, a) under the configured method.
  RewardTable table(const ExperimentConfig& config, std::uint64_t seed) const;
};

FeatureSpace feature_space(const MDPSpec& mdp);
MDPSpec build_env(const ExperimentConfig& config, const StageSeeds& seeds);
RunData generate_data(const ExperimentConfig& config, const StageSeeds& seeds);
std::shared_ptr<const VaeModel> run_vae_stage(const ExperimentConfig& config, const RunData& data,
                                              const StageSeeds& seeds);
/// Skipped (empty result) for the oracle and sft methods.
RewardStage run_reward_stage(const ExperimentConfig& config, const RunData& data,
                             std::shared_ptr<const VaeModel> vae, const StageSeeds& seeds);
/// Empty for sft, which learns from preferences directly.
LabeledDataset run_label_stage(const ExperimentConfig& config, const RunData& data, const RewardStage& reward,
                               const StageSeeds& seeds);
PolicyArtifacts run_policy_stage(const ExperimentConfig& config, const RunData& data, const LabeledDataset& labeled,
                                 const StageSeeds& seeds);
EvalStats run_eval_stage(const ExperimentConfig& config, const MDPSpec& mdp, const PolicyArtifacts& policy,
                         const StageSeeds& seeds);

struct PipelineResult {
  StageSeeds seeds;
  RunData data;
  std::shared_ptr<const VaeModel> vae;
  RewardStage reward;
  LabeledDataset labeled;
  std::optional<PolicyArtifacts> policy;
  EvalStats eval;
  nlohmann::json manifest;  // only when written to disk
};

/// Generate data, train the VAE (hpl only), train the reward model, label,
/// train the policy and evaluate. With `out_dir` every artifact and a
/// manifest of SHA-256 hashes are written; a failing stage rethrows with the
/// stage name after its predecessors' artifacts are on disk.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::optional<std::filesystem::path>& out_dir);

/// Single-stage entry points over a run directory: gen-data, train-vae,
/// train-reward, label, train-rl, eval. Each reads its inputs from `dir`.
void run_stage(const std::string& stage, const ExperimentConfig& config, const std::filesystem::path& dir);

/// Hash of every file below `dir` except manifest.json, keyed by relative path.
nlohmann::json hash_artifacts(const std::filesystem::path& dir);
nlohmann::json write_manifest(const ExperimentConfig& config, const StageSeeds& seeds,
                              const std::filesystem::path& dir);

/// Write through a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace hpl
