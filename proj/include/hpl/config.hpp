#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/datasets.hpp"
#include "hpl/hindsight_vae.hpp"
#include "hpl/preference.hpp"
#include "hpl/rl.hpp"

namespace hpl {

enum class Method { Oracle, Sft, Mr, MrEnsemble, Hpl };
std::string to_string(Method method);
Method parse_method(const std::string& name);

struct EnvConfig {
  std::string id = "random";  // random | gambling
  int states = 10;
  int actions = 3;
  int branching = 3;
  double reward_sparsity = 0.5;
  int horizon = 20;
  /// Seed of the MDP structure; derived from the master seed when absent.
  std::optional<std::uint64_t> seed;
};

struct DataConfig {
  std::string preferences = "sampled";  // sampled | gambling-fixed
  std::string pref_policy = "noisy:0.1";
  int pref_trajectories = 200;
  int pref_pairs = 100;
  int segment_length = 5;
  std::string annotator = "deterministic";  // deterministic | bt-noisy
  double annotator_temperature = 1.0;
  std::string unlabeled_policy = "uniform";
  int unlabeled_trajectories = 500;
  /// Share of the unlabeled trajectories kept (dataset-size sweeps).
  double unlabeled_fraction = 1.0;
};

struct MethodConfig {
  Method name = Method::Hpl;
  int ensemble_size = 5;
};

struct LabelConfig {
  std::string marginal = "auto";  // auto | exact | monte-carlo
  int samples = 20;
};

struct EvalConfig {
  int episodes = 100;
  bool greedy = true;
};

struct ExperimentConfig {
  EnvConfig env;
  DataConfig data;
  MethodConfig method;
  VaeConfig vae;
  RewardConfig reward;
  LabelConfig label;
  RlConfig rl;
  SftConfig sft;
  EvalConfig eval;
  std::uint64_t seed = 0;

  /// Throws Error(Config) naming the first invalid field.
  void validate() const;
  /// Set one `section.key` from text. Unknown keys throw Error(Config).
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in canonical order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  nlohmann::json to_json() const;
  std::string to_text() const;
  /// Marginalization mode after resolving `auto`.
  MarginalMode marginal_mode() const;
};

/// Parses `section.key = value` lines; `#` starts a comment.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies a `section.key=value` override.
void apply_override(ExperimentConfig& config, const std::string& assignment);
/// Recipe presets: "random" (default hyperparameters), "random-desk" (smaller
/// networks and fewer steps for multi-seed runs on one core) and "gambling".
ExperimentConfig preset_config(const std::string& name);

}  // namespace hpl
