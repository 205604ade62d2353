#include "hpl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hpl/error.hpp"
#include "hpl/hash.hpp"

namespace hpl {

namespace fs = std::filesystem;
using nlohmann::json;

StageSeeds StageSeeds::derive(const ExperimentConfig& config) {
  StageSeeds s;
  s.master = config.seed;
  s.env = config.env.seed ? *config.env.seed : derive_seed(config.seed, "env");
  s.pref_data = derive_seed(config.seed, "pref-data");
  s.annotate = derive_seed(config.seed, "annotate");
  s.unlabeled = derive_seed(config.seed, "unlabeled-data");
  s.vae = derive_seed(config.seed, "vae");
  s.reward = derive_seed(config.seed, "reward");
  s.label = derive_seed(config.seed, "label");
  s.rl = derive_seed(config.seed, "rl");
  s.eval = derive_seed(config.seed, "eval");
  return s;
}

json StageSeeds::to_json() const {
  return {{"master", master}, {"env", env},       {"pref_data", pref_data}, {"annotate", annotate},
          {"unlabeled", unlabeled}, {"vae", vae}, {"reward", reward},       {"label", label},
          {"rl", rl},           {"eval", eval}};
}

FeatureSpace feature_space(const MDPSpec& mdp) { return {mdp.num_states, mdp.num_actions}; }

MDPSpec build_env(const ExperimentConfig& config, const StageSeeds& seeds) {
  if (config.env.id == "gambling") return gambling_mdp();
  return random_mdp(seeds.env, config.env.states, config.env.actions, config.env.branching,
                    config.env.reward_sparsity, config.env.horizon);
}

RunData generate_data(const ExperimentConfig& config, const StageSeeds& seeds) {
  RunData data;
  data.mdp = build_env(config, seeds);
  const std::string env_id = config.env.id;
  const DataConfig& d = config.data;

  const TabularPolicy behavior = make_policy(data.mdp, d.unlabeled_policy);
  data.unlabeled = collect_unlabeled(data.mdp, behavior, d.unlabeled_trajectories, seeds.unlabeled,
                                     d.unlabeled_policy, env_id);
  // Smaller fractions keep a prefix, so datasets of increasing size are nested.
  const auto keep = static_cast<std::size_t>(
      std::max(1.0, std::round(d.unlabeled_fraction * static_cast<double>(d.unlabeled_trajectories))));
  data.unlabeled.trajectories.resize(std::min(keep, data.unlabeled.trajectories.size()));

  if (d.preferences == "gambling-fixed") {
    data.preferences = gambling_preference_dataset();
  } else {
    const TabularPolicy pref_behavior = make_policy(data.mdp, d.pref_policy);
    const UnlabeledDataset source = collect_unlabeled(data.mdp, pref_behavior, d.pref_trajectories, seeds.pref_data,
                                                      d.pref_policy, env_id);
    auto segments = slice_segments(source, d.segment_length, 2 * d.pref_pairs, derive_seed(seeds.pref_data, "slice"));
    data.preferences = annotate(pair_up(std::move(segments)),
                                Annotator::parse(d.annotator, d.annotator_temperature), seeds.annotate);
    data.preferences.meta = {env_id, d.pref_policy, seeds.pref_data};
  }
  return data;
}

std::shared_ptr<const VaeModel> run_vae_stage(const ExperimentConfig& config, const RunData& data,
                                              const StageSeeds& seeds) {
  if (config.method.name != Method::Hpl) return nullptr;
  return std::make_shared<const VaeModel>(
      train_vae(data.unlabeled.learner_view(), feature_space(data.mdp), config.vae, seeds.vae).model);
}

RewardTable RewardStage::table(const ExperimentConfig& config, std::uint64_t seed) const {
  if (models.empty()) throw Error(ErrorCode::MissingVae, "no reward model trained for this method");
  if (config.method.name == Method::MrEnsemble) return ensemble_table(models);
  return reward_table(models.front(), config.marginal_mode(), config.label.samples, seed);
}

RewardStage run_reward_stage(const ExperimentConfig& config, const RunData& data,
                             std::shared_ptr<const VaeModel> vae, const StageSeeds& seeds) {
  RewardStage stage;
  const FeatureSpace features = feature_space(data.mdp);
  switch (config.method.name) {
    case Method::Oracle:
    case Method::Sft:
      break;
    case Method::Mr:
    case Method::Hpl: {
      const RewardKind kind = config.method.name == Method::Hpl ? RewardKind::Hindsight : RewardKind::Markovian;
      auto r = train_reward(data.preferences, kind, features, std::move(vae), config.reward, seeds.reward);
      stage.models.push_back(std::move(r.model));
      stage.diagnostics.push_back(r.diagnostics);
      break;
    }
    case Method::MrEnsemble:
      for (auto& r :
           train_reward_ensemble(data.preferences, features, config.method.ensemble_size, config.reward, seeds.reward)) {
        stage.models.push_back(std::move(r.model));
        stage.diagnostics.push_back(r.diagnostics);
      }
      break;
  }
  return stage;
}

LabeledDataset run_label_stage(const ExperimentConfig& config, const RunData& data, const RewardStage& reward,
                               const StageSeeds& seeds) {
  switch (config.method.name) {
    case Method::Sft:
      return {};
    case Method::Oracle:
      return label_oracle(data.unlabeled);
    case Method::MrEnsemble:
      return label_from_table(data.unlabeled.learner_view(), reward.table(config, seeds.label),
                              {"ensemble:" + std::to_string(reward.models.size()), 0, true});
    case Method::Mr:
    case Method::Hpl:
      return label_dataset(data.unlabeled.learner_view(), reward.models.front(), config.marginal_mode(),
                           config.label.samples, seeds.label);
  }
  return {};
}

PolicyArtifacts run_policy_stage(const ExperimentConfig& config, const RunData& data, const LabeledDataset& labeled,
                                 const StageSeeds& seeds) {
  const FeatureSpace features = feature_space(data.mdp);
  if (config.method.name == Method::Sft) return sft_train(data.preferences, features, config.rl, config.sft, seeds.rl);
  return iql_train(labeled, features, config.rl, seeds.rl).policy;
}

EvalStats run_eval_stage(const ExperimentConfig& config, const MDPSpec& mdp, const PolicyArtifacts& policy,
                         const StageSeeds& seeds) {
  TabularPolicy pi = policy.action_probs();
  if (config.eval.greedy) {
    std::vector<int> actions(mdp.num_states);
    for (int s = 0; s < mdp.num_states; ++s) actions[s] = policy.greedy_action(s);
    pi = deterministic_policy(mdp.num_actions, actions);
  }
  return evaluate(pi, mdp, config.eval.episodes, seeds.eval);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::Io, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

json hash_artifacts(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& rel : files) out[rel] = sha256_file(dir / rel);
  return out;
}

json write_manifest(const ExperimentConfig& config, const StageSeeds& seeds, const fs::path& dir) {
  json manifest{{"format", "hpl-run-v1"},
                {"config", config.to_json()},
                {"seeds", seeds.to_json()},
                {"artifacts", hash_artifacts(dir)}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

namespace {

// Artifact file names inside a run directory.
constexpr const char* kConfigFile = "config.txt";
constexpr const char* kMdpFile = "mdp.json";
constexpr const char* kUnlabeledFile = "unlabeled.jsonl";
constexpr const char* kOracleFile = "unlabeled.oracle.jsonl";
constexpr const char* kPreferenceFile = "preferences.jsonl";
constexpr const char* kVaeDir = "vae";
constexpr const char* kRewardDir = "reward";
constexpr const char* kLabeledFile = "labeled.jsonl";
constexpr const char* kPolicyDir = "policy";
constexpr const char* kEvalFile = "eval.json";

template <class F>
auto stage_guard(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage ") + stage + ": " + e.detail());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Io, std::string("stage ") + stage + ": " + e.what());
  }
}

void save_data(const RunData& data, const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_atomic(dir / kConfigFile, config.to_text());
  write_text_atomic(dir / kMdpFile, to_json(data.mdp).dump(2) + "\n");
  save_dataset(data.unlabeled.learner_view(), dir / kUnlabeledFile);
  save_dataset(data.unlabeled, dir / kOracleFile);
  save_dataset(data.preferences, dir / kPreferenceFile);
}

RunData load_data(const fs::path& dir) {
  std::ifstream in(dir / kMdpFile);
  if (!in) throw Error(ErrorCode::Io, "missing " + (dir / kMdpFile).string() + " (run gen-data first)");
  RunData data;
  data.mdp = mdp_from_json(json::parse(in));
  data.unlabeled = load_unlabeled(dir / kOracleFile);
  data.preferences = load_preferences(dir / kPreferenceFile);
  return data;
}

void save_reward(const RewardStage& stage, const StageSeeds& seeds, const fs::path& dir) {
  const fs::path root = dir / kRewardDir;
  if (stage.models.size() == 1) {
    stage.models.front().save(root, seeds.reward);
    write_text_atomic(root / "diagnostics.json", stage.diagnostics.front().to_json().dump(2) + "\n");
    return;
  }
  json diag = json::array();
  for (std::size_t i = 0; i < stage.models.size(); ++i) {
    stage.models[i].save(root / ("member_" + std::to_string(i)), stage.diagnostics[i].seed);
    diag.push_back(stage.diagnostics[i].to_json());
  }
  write_text_atomic(root / "diagnostics.json", diag.dump(2) + "\n");
}

RewardStage load_reward(const ExperimentConfig& config, std::shared_ptr<const VaeModel> vae, const fs::path& dir) {
  RewardStage stage;
  const fs::path root = dir / kRewardDir;
  if (config.method.name == Method::MrEnsemble) {
    for (int i = 0; i < config.method.ensemble_size; ++i)
      stage.models.push_back(RewardModel::load(root / ("member_" + std::to_string(i))));
  } else if (config.method.name == Method::Mr || config.method.name == Method::Hpl) {
    stage.models.push_back(RewardModel::load(root, std::move(vae)));
  }
  return stage;
}

std::shared_ptr<const VaeModel> load_vae(const ExperimentConfig& config, const fs::path& dir) {
  if (config.method.name != Method::Hpl) return nullptr;
  return std::make_shared<const VaeModel>(VaeModel::load(dir / kVaeDir));
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const std::optional<fs::path>& out_dir) {
  config.validate();
  PipelineResult r;
  r.seeds = StageSeeds::derive(config);
  const bool write = out_dir.has_value();
  const fs::path dir = write ? *out_dir : fs::path();

  r.data = stage_guard("gen-data", [&] {
    RunData d = generate_data(config, r.seeds);
    if (write) save_data(d, config, dir);
    return d;
  });
  r.vae = stage_guard("train-vae", [&] {
    auto vae = run_vae_stage(config, r.data, r.seeds);
    if (write && vae) vae->save(dir / kVaeDir, r.seeds.vae, dataset_hash(r.data.unlabeled.learner_view()));
    return vae;
  });
  r.reward = stage_guard("train-reward", [&] {
    RewardStage s = run_reward_stage(config, r.data, r.vae, r.seeds);
    if (write && !s.models.empty()) save_reward(s, r.seeds, dir);
    return s;
  });
  r.labeled = stage_guard("label", [&] {
    LabeledDataset l = run_label_stage(config, r.data, r.reward, r.seeds);
    if (write && config.method.name != Method::Sft) save_labeled(l, dir / kLabeledFile);
    return l;
  });
  r.policy = stage_guard("train-rl", [&] {
    PolicyArtifacts p = run_policy_stage(config, r.data, r.labeled, r.seeds);
    if (write) p.save(dir / kPolicyDir, r.seeds.rl, {{"method", to_string(config.method.name)}});
    return p;
  });
  r.eval = stage_guard("eval", [&] {
    EvalStats e = run_eval_stage(config, r.data.mdp, *r.policy, r.seeds);
    if (write) write_text_atomic(dir / kEvalFile, e.to_json().dump(2) + "\n");
    return e;
  });
  if (write) r.manifest = write_manifest(config, r.seeds, dir);
  return r;
}

void run_stage(const std::string& stage, const ExperimentConfig& config, const fs::path& dir) {
  config.validate();
  const StageSeeds seeds = StageSeeds::derive(config);
  if (stage == "gen-data") {
    stage_guard("gen-data", [&] { save_data(generate_data(config, seeds), config, dir); });
  } else if (stage == "train-vae") {
    stage_guard("train-vae", [&] {
      if (config.method.name != Method::Hpl) throw Error(ErrorCode::Config, "train-vae needs method.name = hpl");
      const RunData data = load_data(dir);
      run_vae_stage(config, data, seeds)->save(dir / kVaeDir, seeds.vae, dataset_hash(data.unlabeled.learner_view()));
    });
  } else if (stage == "train-reward") {
    stage_guard("train-reward", [&] {
      const RunData data = load_data(dir);
      const RewardStage s = run_reward_stage(config, data, load_vae(config, dir), seeds);
      if (s.models.empty()) throw Error(ErrorCode::Config, "method " + to_string(config.method.name) + " has no reward model");
      save_reward(s, seeds, dir);
    });
  } else if (stage == "label") {
    stage_guard("label", [&] {
      if (config.method.name == Method::Sft) throw Error(ErrorCode::Config, "sft does not label the unlabeled data");
      const RunData data = load_data(dir);
      const RewardStage reward = load_reward(config, load_vae(config, dir), dir);
      save_labeled(run_label_stage(config, data, reward, seeds), dir / kLabeledFile);
    });
  } else if (stage == "train-rl") {
    stage_guard("train-rl", [&] {
      const RunData data = load_data(dir);
      const LabeledDataset labeled =
          config.method.name == Method::Sft ? LabeledDataset{} : load_labeled(dir / kLabeledFile);
      run_policy_stage(config, data, labeled, seeds)
          .save(dir / kPolicyDir, seeds.rl, {{"method", to_string(config.method.name)}});
    });
  } else if (stage == "eval") {
    stage_guard("eval", [&] {
      const RunData data = load_data(dir);
      const PolicyArtifacts policy = PolicyArtifacts::load(dir / kPolicyDir);
      write_text_atomic(dir / kEvalFile, run_eval_stage(config, data.mdp, policy, seeds).to_json().dump(2) + "\n");
    });
  } else {
    throw Error(ErrorCode::Config, "unknown stage '" + stage + "'");
  }
}

}  // namespace hpl
