#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "hpl/datasets.hpp"
#include "hpl/envs.hpp"
#include "hpl/error.hpp"
#include "hpl/hindsight_vae.hpp"
#include "hpl/preference.hpp"
#include "hpl/rl.hpp"

using namespace hpl;

namespace {

const FeatureSpace kGamblingFeatures{5, 3};

RlConfig small_rl() {
  RlConfig c;
  c.hidden_dim = 32;
  c.steps = 2000;
  c.batch_size = 64;
  c.learning_rate = 1e-3;
  return c;
}

VaeConfig tiny_vae(int num_codes) {
  VaeConfig c;
  c.future_length = 1;
  c.num_codes = num_codes;
  c.embed_dim = 8;
  c.ffn_dim = 8;
  c.hidden_dim = 8;
  c.hidden_layers = 1;
  return c;
}

RewardConfig linear_reward() {
  RewardConfig c;
  c.hidden_layers = 0;
  return c;
}

UnlabeledDataset gambling_data(int n, std::uint64_t seed) {
  const MDPSpec mdp = gambling_mdp();
  return collect_unlabeled(mdp, make_policy(mdp, "gambling-uniform"), n, seed);
}

std::vector<Transition> random_transitions(Rng& rng, int states, int actions, int n) {
  std::vector<Transition> out;
  for (int i = 0; i < n; ++i)
    out.push_back({static_cast<int>(rng.index(states)), static_cast<int>(rng.index(actions)), rng.normal(),
                   static_cast<int>(rng.index(states)), rng.bernoulli(0.3)});
  return out;
}

}  // namespace

TEST(Marginal, ConstantInCodeAndTwoCodeAverage) {
  auto vae_model = std::make_shared<VaeModel>(kGamblingFeatures, tiny_vae(2), 1);
  for (auto& e : vae_model->params().entries())
    if (e.name.rfind("prior/", 0) == 0) e.value.setZero();
  std::shared_ptr<const VaeModel> vae = vae_model;
  RewardModel model(RewardKind::Hindsight, kGamblingFeatures, linear_reward(), 2, vae);
  Matrix& w = model.params().value(*model.params().find("reward/l0/w"));
  Matrix& b = model.params().value(*model.params().find("reward/l0/b"));
  w.setZero();
  b(0, 0) = 1.7;
  Rng rng(3);
  for (int n : {1, 5, 20}) EXPECT_NEAR(marginal_reward(model, 0, 1, MarginalMode::MonteCarlo, n, &rng), 1.7, 1e-12);
  EXPECT_NEAR(marginal_reward(model, 0, 1, MarginalMode::Exact), 1.7, 1e-12);

  b.setZero();
  w(kGamblingFeatures.step_dim() + 0, 0) = 1.0;  // r(., ., z=0) = 1, r(., ., z=1) = 0
  EXPECT_NEAR(marginal_reward(model, 2, 2, MarginalMode::Exact), 0.5, 1e-12);
}

TEST(Marginal, MonteCarloConvergesToExact) {
  auto vae = std::make_shared<const VaeModel>(FeatureSpace{6, 3}, tiny_vae(8), 5);
  RewardConfig c;
  c.hidden_dim = 16;
  c.hidden_layers = 1;
  RewardModel model(RewardKind::Hindsight, {6, 3}, c, 9, vae);
  Rng pick(1);
  for (int i = 0; i < 20; ++i) {
    const int s = static_cast<int>(pick.index(6)), a = static_cast<int>(pick.index(3));
    Rng rng(derive_seed(17, i));
    const double mc = marginal_reward(model, s, a, MarginalMode::MonteCarlo, 10000, &rng);
    EXPECT_LT(std::abs(mc - marginal_reward(model, s, a, MarginalMode::Exact)), 0.01);
  }
}

TEST(Marginal, MarkovianModelRejected) {
  RewardModel model(RewardKind::Markovian, kGamblingFeatures, linear_reward(), 2);
  try {
    marginal_reward(model, 0, 0, MarginalMode::Exact);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModeMismatch);
  }
}

TEST(Label, ConstantMarkovianModel) {
  RewardModel model(RewardKind::Markovian, kGamblingFeatures, linear_reward(), 2);
  model.params().value(*model.params().find("reward/l0/w")).setZero();
  model.params().value(*model.params().find("reward/l0/b"))(0, 0) = -0.25;
  const auto data = label_dataset(gambling_data(50, 1).learner_view(), model, MarginalMode::Exact, 20, 0);
  ASSERT_EQ(data.transitions.size(), 100u);
  for (const auto& t : data.transitions) EXPECT_EQ(t.r, -0.25);
  EXPECT_EQ(data.provenance.reward_id, "markovian");
}

TEST(Label, TransitionsFollowTrajectories) {
  const auto du = gambling_data(30, 2);
  const auto data = label_oracle(du);
  const MDPSpec mdp = gambling_mdp();
  std::size_t i = 0;
  for (const auto& traj : du.trajectories) {
    for (std::size_t t = 0; t < traj.length(); ++t, ++i) {
      const Transition& tr = data.transitions[i];
      EXPECT_EQ(tr.r, mdp.reward[tr.s][tr.a]);
      EXPECT_EQ(tr.s2, t + 1 < traj.length() ? traj.states[t + 1] : traj.final_state);
      EXPECT_EQ(tr.done, t + 1 == traj.length());
    }
  }
  try {
    label_oracle(du.learner_view());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingOracleRewards);
  }
}

TEST(Label, ExactIsDeterministicAndOrderIndependent) {
  auto vae = std::make_shared<const VaeModel>(kGamblingFeatures, tiny_vae(4), 5);
  RewardModel model(RewardKind::Hindsight, kGamblingFeatures, RewardConfig{}, 9, vae);
  auto du = gambling_data(40, 3).learner_view();
  const auto a = label_dataset(du, model, MarginalMode::Exact, 20, 1);
  EXPECT_EQ(a, label_dataset(du, model, MarginalMode::Exact, 20, 1));

  for (MarginalMode mode : {MarginalMode::Exact, MarginalMode::MonteCarlo}) {
    const auto base = label_dataset(du, model, mode, 20, 1);
    auto permuted = du;
    std::reverse(permuted.trajectories.begin(), permuted.trajectories.end());
    const auto relabeled = label_dataset(permuted, model, mode, 20, 1);
    // Trajectories have length 2, so reversing trajectories reverses pairs of transitions.
    const std::size_t n = base.transitions.size();
    for (std::size_t i = 0; i < n; i += 2) {
      EXPECT_EQ(relabeled.transitions[i], base.transitions[n - 2 - i]);
      EXPECT_EQ(relabeled.transitions[i + 1], base.transitions[n - 1 - i]);
    }
  }
}

TEST(Label, PersistenceRoundTrip) {
  const auto data = label_oracle(gambling_data(10, 4));
  const auto path = std::filesystem::temp_directory_path() / "hpl_labeled" / "labeled.jsonl";
  save_labeled(data, path);
  EXPECT_EQ(load_labeled(path), data);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.size(), 5u);
  for (const char* key : {"s", "a", "r", "s2", "done"}) EXPECT_TRUE(j.contains(key)) << key;
  std::filesystem::remove_all(path.parent_path());
}

TEST(Expectile, Identities) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double u = rng.normal();
    EXPECT_NEAR(expectile_loss(u, 0.5), 0.5 * u * u, 1e-15);
  }
  for (double tau : {0.6, 0.75, 0.9, 0.99}) {
    for (double u : {0.1, 1.0, 3.0}) {
      EXPECT_NEAR(expectile_loss(u, tau) / expectile_loss(-u, tau), tau / (1 - tau), 1e-9);
    }
  }
}

TEST(AdvantageWeight, ClipsAtThreshold) {
  RlConfig c;
  EXPECT_EQ(advantage_weight(10.0, c), 100.0);
  EXPECT_EQ(advantage_weight(c.inverse_temperature * std::log(100.0) + 1e-9, c), 100.0);
  EXPECT_EQ(advantage_weight(0.0, c), 1.0);
  EXPECT_NEAR(advantage_weight(-0.333, c), std::exp(-1.0), 1e-12);
  EXPECT_EQ(advantage_weight(1e6, c), 100.0);
}

TEST(IqlLosses, GradientsMatchFiniteDifferences) {
  for (int draw = 0; draw < 5; ++draw) {
    RlConfig c;
    c.hidden_dim = 8;
    PolicyArtifacts p({5, 3}, c, 10 + draw);
    Rng rng(derive_seed(9, draw));
    // Move the target away from the critic so the advantages are not all zero.
    for (auto& e : p.target_params().entries()) e.value.array() += 0.3 * rng.normal();
    const auto batch = random_transitions(rng, 5, 3, 12);
    auto v = grad_check([&](ParamStore&, bool g) { return p.value_loss(batch, g); }, p.v_params(), 1e-4);
    auto q = grad_check([&](ParamStore&, bool g) { return p.q_loss(batch, g); }, p.q_params(), 1e-4);
    auto pi = grad_check([&](ParamStore&, bool g) { return p.policy_loss(batch, g); }, p.policy_params(), 1e-4);
    EXPECT_TRUE(v.passed) << v.max_rel_error;
    EXPECT_TRUE(q.passed) << q.max_rel_error;
    EXPECT_TRUE(pi.passed) << pi.max_rel_error;
    std::vector<int> s{0, 1, 2, 2}, a{1, 0, 2, 1};
    std::vector<double> w{1.0, 0.5, 0.5, 2.0};
    auto bc = grad_check([&](ParamStore&, bool g) { return p.cloning_loss(s, a, w, g); }, p.policy_params(), 1e-4);
    EXPECT_TRUE(bc.passed) << bc.max_rel_error;
  }
}

TEST(Iql, OracleGamblingPicksSafeAction) {
  const auto data = label_oracle(gambling_data(500, 5));
  const auto result = iql_train(data, kGamblingFeatures, small_rl(), 3);
  EXPECT_EQ(result.policy.greedy_action(gambling::kStart), gambling::kSafe);
  double max_r = 0.0;
  for (const auto& t : data.transitions) max_r = std::max(max_r, std::abs(t.r));
  EXPECT_LE(result.max_abs_value, max_r / (1 - small_rl().discount) + 1.0);
}

TEST(Iql, DeterministicAndRoundTrips) {
  const auto data = label_oracle(gambling_data(50, 6));
  RlConfig c = small_rl();
  c.steps = 50;
  const auto a = iql_train(data, kGamblingFeatures, c, 8);
  const auto b = iql_train(data, kGamblingFeatures, c, 8);
  EXPECT_TRUE(a.policy.action_probs() == b.policy.action_probs());
  EXPECT_TRUE(a.policy.q_table() == b.policy.q_table());
  const auto dir = std::filesystem::temp_directory_path() / "hpl_policy_ckpt";
  std::filesystem::remove_all(dir);
  a.policy.save(dir, 8);
  const auto loaded = PolicyArtifacts::load(dir);
  EXPECT_TRUE(loaded.action_probs() == a.policy.action_probs());
  EXPECT_TRUE(loaded.q_table() == a.policy.q_table());
  EXPECT_TRUE(loaded.v_table() == a.policy.v_table());
  std::filesystem::remove_all(dir);
}

TEST(Iql, EmptyDataset) {
  try {
    iql_train(LabeledDataset{}, kGamblingFeatures, small_rl(), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Sft, ClonesPreferredAction) {
  const auto d = gambling_preference_dataset();
  SftConfig sc;
  sc.steps = 300;
  const auto policy = sft_train(d, kGamblingFeatures, small_rl(), sc, 2);
  // Preferred segments: good (a1) twice, good (a1), avg (a2). a1 dominates.
  EXPECT_EQ(policy.greedy_action(gambling::kStart), gambling::kRisky);

  PreferenceDataset safe;
  Segment avg{{gambling::kStart, gambling::kAvg}, {gambling::kSafe, gambling::kFinish}, -1, 0, std::nullopt};
  Segment bad{{gambling::kStart, gambling::kBad}, {gambling::kRisky, gambling::kFinish}, -1, 0, std::nullopt};
  safe.pairs = {{avg, bad, 0.0}, {bad, avg, 1.0}};
  const auto a = sft_train(safe, kGamblingFeatures, small_rl(), sc, 4);
  const auto b = sft_train(safe, kGamblingFeatures, small_rl(), sc, 4);
  EXPECT_EQ(a.greedy_action(gambling::kStart), gambling::kSafe);
  EXPECT_TRUE(a.action_probs() == b.action_probs());
}

TEST(Sft, EmptyDataset) {
  try {
    sft_train(PreferenceDataset{}, kGamblingFeatures, small_rl(), SftConfig{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Evaluate, GamblingReturns) {
  const MDPSpec mdp = gambling_mdp();
  const auto best = evaluate(make_policy(mdp, "optimal"), mdp, 1000, 1);
  EXPECT_EQ(best.mean_return, 0.0);
  EXPECT_EQ(best.action_frequencies.at(gambling::kStart)[gambling::kSafe], 1.0);

  TabularPolicy risky = make_policy(mdp, "gambling-uniform");
  risky.row(gambling::kStart) << 1.0, 0.0, 0.0;
  const auto stats = evaluate(risky, mdp, 10000, 2);
  EXPECT_GE(stats.mean_return, -0.86);
  EXPECT_LE(stats.mean_return, -0.74);
  EXPECT_GT(stats.std_return, 0.0);
  EXPECT_EQ(stats.to_json(), evaluate(risky, mdp, 10000, 2).to_json());
  EXPECT_THROW(evaluate(risky, mdp, 0, 2), Error);
}
