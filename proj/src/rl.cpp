#include "hpl/rl.hpp"

#include <cmath>
#include <fstream>

#include "hpl/error.hpp"

namespace hpl {

using nlohmann::json;

std::string to_string(MarginalMode mode) { return mode == MarginalMode::Exact ? "exact" : "monte-carlo"; }

MarginalMode parse_marginal_mode(const std::string& name) {
  if (name == "exact") return MarginalMode::Exact;
  if (name == "monte-carlo") return MarginalMode::MonteCarlo;
  throw Error(ErrorCode::Config, "unknown marginalization mode '" + name + "'");
}

double marginal_reward(const RewardModel& model, int s, int a, MarginalMode mode, int n, Rng* rng) {
  if (model.kind() != RewardKind::Hindsight)
    throw Error(ErrorCode::ModeMismatch, "marginalization needs a hindsight reward model");
  if (!model.vae()) throw Error(ErrorCode::MissingVae, "marginalization needs the VAE prior");
  const RowVector rewards = model.reward_per_code(s, a);
  if (mode == MarginalMode::Exact) return model.vae()->enumerate_prior(s, a).dot(rewards);
  if (n < 1) throw Error(ErrorCode::InvalidDimension, "sample count must be >= 1");
  if (!rng) throw Error(ErrorCode::ModeMismatch, "monte-carlo marginalization needs a random stream");
  double total = 0.0;
  for (int z : model.vae()->sample_prior(s, a, n, *rng)) total += rewards[z];
  return total / n;
}

LabeledDataset label_from_table(const UnlabeledDataset& unlabeled, const RewardTable& table,
                                LabelProvenance provenance) {
  LabeledDataset out;
  out.provenance = std::move(provenance);
  for (const Trajectory& traj : unlabeled.trajectories) {
    const std::size_t T = traj.length();
    for (std::size_t t = 0; t < T; ++t) {
      Transition tr;
      tr.s = traj.states[t];
      tr.a = traj.actions[t];
      if (tr.s < 0 || tr.s >= table.rows() || tr.a < 0 || tr.a >= table.cols())
        throw Error(ErrorCode::InvalidDimension, "step outside the reward table");
      tr.r = table(tr.s, tr.a);
      tr.s2 = t + 1 < T ? traj.states[t + 1] : traj.final_state;
      tr.done = t + 1 == T && traj.terminated;
      out.transitions.push_back(tr);
    }
  }
  return out;
}

RewardTable reward_table(const RewardModel& model, MarginalMode mode, int n, std::uint64_t seed) {
  const FeatureSpace& f = model.features();
  RewardTable table(f.num_states, f.num_actions);
  for (int s = 0; s < f.num_states; ++s) {
    for (int a = 0; a < f.num_actions; ++a) {
      if (model.kind() == RewardKind::Markovian) {
        table(s, a) = model.reward(s, a);
      } else {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s * f.num_actions + a)));
        table(s, a) = marginal_reward(model, s, a, mode, n, &rng);
      }
    }
  }
  if (!table.allFinite()) throw Error(ErrorCode::NonFinite, "reward labels are not finite");
  return table;
}

RewardTable ensemble_table(std::span<const RewardModel> members) {
  if (members.empty()) throw Error(ErrorCode::EmptyDataset, "empty ensemble");
  const FeatureSpace& f = members.front().features();
  RewardTable table(f.num_states, f.num_actions);
  for (int s = 0; s < f.num_states; ++s)
    for (int a = 0; a < f.num_actions; ++a) table(s, a) = ensemble_reward(members, s, a);
  return table;
}

LabeledDataset label_dataset(const UnlabeledDataset& unlabeled, const RewardModel& model, MarginalMode mode,
                             int n, std::uint64_t seed) {
  const bool hindsight = model.kind() == RewardKind::Hindsight;
  LabelProvenance p{to_string(model.kind()), hindsight && mode == MarginalMode::MonteCarlo ? n : 0,
                    !hindsight || mode == MarginalMode::Exact};
  return label_from_table(unlabeled, reward_table(model, mode, n, seed), p);
}

LabeledDataset label_ensemble(const UnlabeledDataset& unlabeled, std::span<const RewardModel> members) {
  return label_from_table(unlabeled, ensemble_table(members),
                          {"ensemble:" + std::to_string(members.size()), 0, true});
}

LabeledDataset label_oracle(const UnlabeledDataset& unlabeled) {
  LabeledDataset out;
  out.provenance = {"oracle", 0, true};
  for (const Trajectory& traj : unlabeled.trajectories) {
    if (!traj.rewards) throw Error(ErrorCode::MissingOracleRewards, "trajectory has no ground-truth rewards");
    const std::size_t T = traj.length();
    for (std::size_t t = 0; t < T; ++t) {
      out.transitions.push_back({traj.states[t], traj.actions[t], (*traj.rewards)[t],
                                 t + 1 < T ? traj.states[t + 1] : traj.final_state, t + 1 == T && traj.terminated});
    }
  }
  return out;
}

void save_labeled(const LabeledDataset& data, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const Transition& t : data.transitions)
    out << json{{"s", t.s}, {"a", t.a}, {"r", t.r}, {"s2", t.s2}, {"done", t.done}}.dump() << '\n';
  std::ofstream meta(path.string() + ".meta.json", std::ios::trunc);
  meta << json{{"reward_id", data.provenance.reward_id},
               {"samples", data.provenance.samples},
               {"exact", data.provenance.exact}}
              .dump(2)
       << '\n';
  if (!out || !meta) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

LabeledDataset load_labeled(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  LabeledDataset data;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Transition t{j.at("s"), j.at("a"), j.at("r"), j.at("s2"), j.at("done")};
      if (!std::isfinite(t.r)) throw Error(ErrorCode::NonFinite, "reward is not finite");
      data.transitions.push_back(t);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Schema, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (data.transitions.empty()) throw Error(ErrorCode::EmptyDataset, path.string() + " has no transitions");
  std::ifstream meta_in(path.string() + ".meta.json");
  if (meta_in) {
    try {
      const json m = json::parse(meta_in);
      data.provenance = {m.at("reward_id"), m.at("samples"), m.at("exact")};
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Schema, path.string() + ".meta.json: " + e.what());
    }
  }
  return data;
}

void RlConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::Config, std::string("rl: ") + what);
  };
  require(discount >= 0.0 && discount < 1.0, "discount must be in [0, 1)");
  require(expectile > 0.0 && expectile < 1.0, "expectile must be in (0, 1)");
  require(inverse_temperature > 0.0, "inverse_temperature must be > 0");
  require(advantage_clip > 0.0, "advantage_clip must be > 0");
  require(soft_update > 0.0 && soft_update <= 1.0, "soft_update must be in (0, 1]");
  require(steps >= 0 && batch_size >= 1, "steps/batch_size invalid");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(hidden_dim >= 1 && hidden_layers >= 0, "network sizes invalid");
}

json RlConfig::to_json() const {
  return {{"discount", discount},
          {"expectile", expectile},
          {"inverse_temperature", inverse_temperature},
          {"advantage_clip", advantage_clip},
          {"soft_update", soft_update},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"hidden_dim", hidden_dim},
          {"hidden_layers", hidden_layers},
          {"activation", to_string(activation)}};
}

RlConfig RlConfig::from_json(const json& j) {
  RlConfig c;
  c.discount = j.at("discount");
  c.expectile = j.at("expectile");
  c.inverse_temperature = j.at("inverse_temperature");
  c.advantage_clip = j.at("advantage_clip");
  c.soft_update = j.at("soft_update");
  c.steps = j.at("steps");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.hidden_dim = j.at("hidden_dim");
  c.hidden_layers = j.at("hidden_layers");
  c.activation = parse_activation(j.at("activation"));
  return c;
}

void SftConfig::validate() const {
  if (steps < 0 || batch_size < 1 || !(learning_rate > 0.0))
    throw Error(ErrorCode::Config, "sft: steps/batch_size/learning_rate invalid");
}

json SftConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate}};
}

SftConfig SftConfig::from_json(const json& j) {
  return {j.at("steps"), j.at("batch_size"), j.at("learning_rate")};
}

namespace {

std::vector<int> mlp_sizes(int in, const RlConfig& c, int out) {
  std::vector<int> sizes{in};
  for (int l = 0; l < c.hidden_layers; ++l) sizes.push_back(c.hidden_dim);
  sizes.push_back(out);
  return sizes;
}

}  // namespace

PolicyArtifacts::PolicyArtifacts(FeatureSpace features, const RlConfig& config, std::uint64_t init_seed)
    : features_(features), config_(config) {
  config_.validate();
  Rng rng(init_seed);
  const int S = features_.num_states;
  q_ = Mlp(q_store_, "q", mlp_sizes(features_.step_dim(), config_, 1), config_.activation, Activation::Identity,
           rng);
  v_ = Mlp(v_store_, "v", mlp_sizes(S, config_, 1), config_.activation, Activation::Identity, rng);
  pi_ = Mlp(pi_store_, "pi", mlp_sizes(S, config_, features_.num_actions), config_.activation,
            Activation::Identity, rng);
  target_ = Mlp(target_store_, "q_target", mlp_sizes(features_.step_dim(), config_, 1), config_.activation,
                Activation::Identity, rng);
  sync_target();
}

Matrix PolicyArtifacts::state_input(std::span<const int> s) const {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(s.size()), features_.num_states);
  for (std::size_t i = 0; i < s.size(); ++i) {
    features_.check(s[i], 0);
    x(static_cast<Eigen::Index>(i), s[i]) = 1.0;
  }
  return x;
}

Matrix PolicyArtifacts::state_action_input(std::span<const int> s, std::span<const int> a) const {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(s.size()), features_.step_dim());
  for (std::size_t i = 0; i < s.size(); ++i) {
    features_.check(s[i], a[i]);
    features_.encode_step(x.row(static_cast<Eigen::Index>(i)), s[i], a[i]);
  }
  return x;
}

Vector PolicyArtifacts::q_values(std::span<const int> s, std::span<const int> a, bool target) const {
  const Matrix x = state_action_input(s, a);
  return target ? target_.forward(target_store_, x).col(0) : q_.forward(q_store_, x).col(0);
}

Vector PolicyArtifacts::v_values(std::span<const int> s) const { return v_.forward(v_store_, state_input(s)).col(0); }

TabularPolicy PolicyArtifacts::action_probs() const {
  std::vector<int> all(features_.num_states);
  for (int s = 0; s < features_.num_states; ++s) all[s] = s;
  const Matrix logits = pi_.forward(pi_store_, state_input(all));
  return log_softmax_rows(logits).array().exp();
}

Matrix PolicyArtifacts::q_table() const {
  const int S = features_.num_states, A = features_.num_actions;
  std::vector<int> s, a;
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < A; ++j) {
      s.push_back(i);
      a.push_back(j);
    }
  const Vector q = q_values(s, a);
  Matrix table(S, A);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < A; ++j) table(i, j) = q[i * A + j];
  return table;
}

Vector PolicyArtifacts::v_table() const {
  std::vector<int> all(features_.num_states);
  for (int s = 0; s < features_.num_states; ++s) all[s] = s;
  return v_values(all);
}

int PolicyArtifacts::greedy_action(int s) const {
  Eigen::Index best;
  action_probs().row(s).maxCoeff(&best);
  return static_cast<int>(best);
}

double expectile_loss(double residual, double tau) {
  const double weight = residual < 0.0 ? 1.0 - tau : tau;
  return weight * residual * residual;
}

double advantage_weight(double advantage, const RlConfig& config) {
  const double scaled = advantage / config.inverse_temperature;
  if (scaled >= std::log(config.advantage_clip)) return config.advantage_clip;
  return std::exp(scaled);
}

namespace {

struct Columns {
  std::vector<int> s, a, s2;
  std::vector<double> r, done;
};

Columns columns(std::span<const Transition> batch) {
  Columns c;
  for (const Transition& t : batch) {
    c.s.push_back(t.s);
    c.a.push_back(t.a);
    c.s2.push_back(t.s2);
    c.r.push_back(t.r);
    c.done.push_back(t.done ? 1.0 : 0.0);
  }
  return c;
}

}  // namespace

double PolicyArtifacts::value_loss(std::span<const Transition> batch, bool with_grad) {
  const Columns c = columns(batch);
  const Vector q = q_values(c.s, c.a, true);
  Mlp::Cache cache;
  const Vector v = v_.forward(v_store_, state_input(c.s), with_grad ? &cache : nullptr).col(0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Matrix grad(v.size(), 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double u = q[i] - v[i];
    loss += expectile_loss(u, config_.expectile);
    grad(i, 0) = -2.0 * (u < 0.0 ? 1.0 - config_.expectile : config_.expectile) * u * inv_b;
  }
  if (with_grad) v_.backward(v_store_, cache, grad);
  return loss * inv_b;
}

double PolicyArtifacts::q_loss(std::span<const Transition> batch, bool with_grad) {
  const Columns c = columns(batch);
  const Vector v_next = v_values(c.s2);
  Mlp::Cache cache;
  const Vector q = q_.forward(q_store_, state_action_input(c.s, c.a), with_grad ? &cache : nullptr).col(0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Matrix grad(q.size(), 1);
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double target = c.r[i] + config_.discount * (1.0 - c.done[i]) * v_next[i];
    const double u = q[i] - target;
    loss += u * u;
    grad(i, 0) = 2.0 * u * inv_b;
  }
  if (with_grad) q_.backward(q_store_, cache, grad);
  return loss * inv_b;
}

double PolicyArtifacts::cloning_loss(std::span<const int> s, std::span<const int> a, std::span<const double> w,
                                     bool with_grad) {
  Mlp::Cache cache;
  const Matrix logits = pi_.forward(pi_store_, state_input(s), with_grad ? &cache : nullptr);
  const Matrix logp = log_softmax_rows(logits);
  double total_w = 0.0;
  for (double x : w) total_w += x;
  if (!(total_w > 0.0)) throw Error(ErrorCode::EmptyDataset, "cloning batch has no weight");
  double loss = 0.0;
  Matrix grad = logp.array().exp();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    loss -= w[i] * logp(row, a[i]);
    grad(row, a[i]) -= 1.0;
    grad.row(row) *= w[i] / total_w;
  }
  if (with_grad) pi_.backward(pi_store_, cache, grad);
  return loss / total_w;
}

double PolicyArtifacts::policy_loss(std::span<const Transition> batch, bool with_grad) {
  const Columns c = columns(batch);
  const Vector q = q_values(c.s, c.a, true);
  const Vector v = v_values(c.s);
  std::vector<double> w(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    w[i] = advantage_weight(q[static_cast<Eigen::Index>(i)] - v[static_cast<Eigen::Index>(i)], config_);
  // Weighted mean over the batch size, not the weight sum, so large
  // advantages scale the step as in the usual advantage-weighted update.
  Mlp::Cache cache;
  const Matrix logp = log_softmax_rows(pi_.forward(pi_store_, state_input(c.s), with_grad ? &cache : nullptr));
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  Matrix grad = logp.array().exp();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    loss -= w[i] * logp(row, c.a[i]);
    grad(row, c.a[i]) -= 1.0;
    grad.row(row) *= w[i] * inv_b;
  }
  if (with_grad) pi_.backward(pi_store_, cache, grad);
  return loss * inv_b;
}

void PolicyArtifacts::sync_target() { target_store_.copy_values_from(q_store_); }

void PolicyArtifacts::update_target() { target_store_.soft_update_from(q_store_, config_.soft_update); }

json PolicyArtifacts::hyperparameters() const {
  return {{"model", "policy"},
          {"num_states", features_.num_states},
          {"num_actions", features_.num_actions},
          {"rl", config_.to_json()}};
}

void PolicyArtifacts::save(const std::filesystem::path& dir, std::uint64_t seed, const json& extra) const {
  json h = hyperparameters();
  if (!extra.is_null()) h["extra"] = extra;
  const ParamStore* stores[] = {&q_store_, &target_store_, &v_store_, &pi_store_};
  save_checkpoint(dir, stores, h, seed);
}

PolicyArtifacts PolicyArtifacts::load(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  const json& h = manifest.at("hyperparameters");
  if (h.value("model", "") != "policy") throw Error(ErrorCode::Schema, dir.string() + " is not a policy checkpoint");
  PolicyArtifacts p({h.at("num_states"), h.at("num_actions")}, RlConfig::from_json(h.at("rl")), 0);
  ParamStore* stores[] = {&p.q_store_, &p.target_store_, &p.v_store_, &p.pi_store_};
  load_checkpoint(dir, stores);
  return p;
}

namespace {

void step_or_throw(ParamStore& store, const AdamConfig& adam, long t, int step, const char* what) {
  try {
    adam_step(store, adam, t);
  } catch (const Error& e) {
    throw Error(ErrorCode::NonFinite, std::string(what) + " step " + std::to_string(step) + ": " + e.detail());
  }
}

void check_loss(double loss, int step, const char* what) {
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, std::string(what) + " loss at step " + std::to_string(step));
}

}  // namespace

IqlResult iql_train(const LabeledDataset& data, FeatureSpace features, const RlConfig& config, std::uint64_t seed) {
  if (data.transitions.empty()) throw Error(ErrorCode::EmptyDataset, "labeled dataset is empty");
  for (const Transition& t : data.transitions) {
    features.check(t.s, t.a);
    features.check(t.s2, 0);
  }
  IqlResult result{PolicyArtifacts(features, config, derive_seed(seed, "iql-init")), {}, {}, {}, 0.0};
  PolicyArtifacts& p = result.policy;
  Rng rng(derive_seed(seed, "iql-batches"));
  const AdamConfig adam{.learning_rate = config.learning_rate};
  const std::size_t n = data.transitions.size();
  std::vector<Transition> batch(static_cast<std::size_t>(config.batch_size));
  const int check_every = 50;
  for (int step = 0; step < config.steps; ++step) {
    for (Transition& t : batch) t = data.transitions[rng.index(n)];
    p.v_params().zero_grad();
    const double lv = p.value_loss(batch, true);
    check_loss(lv, step, "value");
    step_or_throw(p.v_params(), adam, step + 1, step, "value");

    p.q_params().zero_grad();
    const double lq = p.q_loss(batch, true);
    check_loss(lq, step, "q");
    step_or_throw(p.q_params(), adam, step + 1, step, "q");

    p.policy_params().zero_grad();
    const double lp = p.policy_loss(batch, true);
    check_loss(lp, step, "policy");
    step_or_throw(p.policy_params(), adam, step + 1, step, "policy");

    p.update_target();
    result.value_losses.push_back(lv);
    result.q_losses.push_back(lq);
    result.policy_losses.push_back(lp);
    if (step % check_every == check_every - 1 || step + 1 == config.steps) {
      result.max_abs_value = std::max({result.max_abs_value, p.q_table().cwiseAbs().maxCoeff(),
                                       p.v_table().cwiseAbs().maxCoeff()});
    }
  }
  p.q_params().round_to_float();
  p.target_params().round_to_float();
  p.v_params().round_to_float();
  p.policy_params().round_to_float();
  return result;
}

PolicyArtifacts sft_train(const PreferenceDataset& data, FeatureSpace features, const RlConfig& rl,
                          const SftConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<int> states, actions;
  std::vector<double> weights;
  auto add = [&](const Segment& seg, double w) {
    for (std::size_t t = 0; t < seg.length(); ++t) {
      features.check(seg.states[t], seg.actions[t]);
      states.push_back(seg.states[t]);
      actions.push_back(seg.actions[t]);
      weights.push_back(w);
    }
  };
  for (const PreferencePair& p : data.pairs) {
    if (p.label == 0.5) {
      add(p.seg0, 0.5);
      add(p.seg1, 0.5);
    } else {
      add(p.label < 0.5 ? p.seg0 : p.seg1, 1.0);
    }
  }
  if (states.empty()) throw Error(ErrorCode::EmptyDataset, "no preferred steps to clone");

  PolicyArtifacts policy(features, rl, derive_seed(seed, "sft-init"));
  Rng rng(derive_seed(seed, "sft-batches"));
  const AdamConfig adam{.learning_rate = config.learning_rate};
  const bool full = static_cast<std::size_t>(config.batch_size) >= states.size();
  std::vector<int> bs, ba;
  std::vector<double> bw;
  for (int step = 0; step < config.steps; ++step) {
    if (full) {
      bs = states;
      ba = actions;
      bw = weights;
    } else {
      bs.clear();
      ba.clear();
      bw.clear();
      for (int b = 0; b < config.batch_size; ++b) {
        const std::size_t i = rng.index(states.size());
        bs.push_back(states[i]);
        ba.push_back(actions[i]);
        bw.push_back(weights[i]);
      }
    }
    policy.policy_params().zero_grad();
    check_loss(policy.cloning_loss(bs, ba, bw, true), step, "cloning");
    step_or_throw(policy.policy_params(), adam, step + 1, step, "cloning");
  }
  policy.policy_params().round_to_float();
  return policy;
}

json EvalStats::to_json() const {
  json freq = json::object();
  for (const auto& [s, f] : action_frequencies) freq[std::to_string(s)] = f;
  return {{"mean_return", mean_return},
          {"std_return", std_return},
          {"episodes", episodes},
          {"seed", seed},
          {"action_frequencies", freq}};
}

EvalStats evaluate(const TabularPolicy& policy, const MDPSpec& mdp, int num_episodes, std::uint64_t seed) {
  if (num_episodes < 1) throw Error(ErrorCode::InvalidDimension, "num_episodes must be >= 1");
  const auto episodes = rollout(mdp, policy, seed, num_episodes);
  EvalStats stats;
  stats.episodes = num_episodes;
  stats.seed = seed;
  std::vector<double> returns;
  Matrix counts = Matrix::Zero(mdp.num_states, mdp.num_actions);
  for (const Trajectory& t : episodes) {
    double ret = 0.0;
    for (std::size_t i = 0; i < t.length(); ++i) {
      ret += mdp.reward[t.states[i]][t.actions[i]];
      counts(t.states[i], t.actions[i]) += 1.0;
    }
    returns.push_back(ret);
  }
  double sum = 0.0;
  for (double r : returns) sum += r;
  stats.mean_return = sum / num_episodes;
  double sq = 0.0;
  for (double r : returns) sq += (r - stats.mean_return) * (r - stats.mean_return);
  stats.std_return = num_episodes > 1 ? std::sqrt(sq / (num_episodes - 1)) : 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    const double visits = counts.row(s).sum();
    if (visits == 0.0) continue;
    std::vector<double> f(mdp.num_actions);
    for (int a = 0; a < mdp.num_actions; ++a) f[a] = counts(s, a) / visits;
    stats.action_frequencies[s] = f;
  }
  return stats;
}

}  // namespace hpl
