#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hpl/datasets.hpp"
#include "hpl/envs.hpp"
#include "hpl/error.hpp"
#include "hpl/hindsight_vae.hpp"
#include "hpl/rng.hpp"

using namespace hpl;

namespace {

VaeConfig small_config(int k, int num_codes = 4) {
  VaeConfig c;
  c.future_length = k;
  c.num_codes = num_codes;
  c.embed_dim = 12;
  c.ffn_dim = 16;
  c.hidden_dim = 24;
  c.hidden_layers = 1;
  c.batch_size = 32;
  c.steps = 1500;
  c.learning_rate = 3e-3;
  return c;
}

void expect_same_dist(const CategoricalDist& a, const CategoricalDist& b, double tol = 1e-12) {
  ASSERT_EQ(a.num_classes(), b.num_classes());
  for (int i = 0; i < a.num_classes(); ++i) EXPECT_NEAR(a.log_probs()[i], b.log_probs()[i], tol);
}

double total_variation(const RowVector& p, const RowVector& q) { return 0.5 * (p - q).cwiseAbs().sum(); }

UnlabeledDataset random_dataset(std::uint64_t seed, int states, int actions, int branching, int traj,
                                int horizon, const std::string& policy = "uniform") {
  const MDPSpec mdp = random_mdp(seed, states, actions, branching, 0.5, horizon);
  return collect_unlabeled(mdp, make_policy(mdp, policy), traj, derive_seed(seed, "collect"));
}

}  // namespace

TEST(VaeEncode, ZeroFutureLengthSeesOnlyCurrentStep) {
  VaeModel vae({4, 2}, small_config(0), 3);
  const std::vector<int> s1{0, 1, 2}, a1{1, 0, 1};
  const std::vector<int> s2{3, 1, 0}, a2{0, 0, 0};
  expect_same_dist(vae.encode(StepView(s1, a1), 1), vae.encode(StepView(s2, a2), 1));
}

TEST(VaeEncode, ClippedWindowNearEnd) {
  VaeModel vae({5, 3}, small_config(3), 11);
  const std::vector<int> long_s{0, 1, 2, 3, 4}, long_a{0, 1, 2, 0, 1};
  const std::vector<int> tail_s{3, 4}, tail_a{0, 1};
  expect_same_dist(vae.encode(StepView(long_s, long_a), 3), vae.encode(StepView(tail_s, tail_a), 0));
}

TEST(VaeEncode, IdenticalFutureDifferentPast) {
  VaeModel vae({5, 3}, small_config(2), 5);
  const std::vector<int> s1{0, 0, 2, 3, 4, 1}, a1{0, 0, 1, 2, 0, 1};
  const std::vector<int> s2{4, 3, 2, 3, 4, 0}, a2{2, 1, 1, 2, 0, 2};
  // Windows [2, 4] match; position 5 lies outside the window at t = 2.
  expect_same_dist(vae.encode(StepView(s1, a1), 2), vae.encode(StepView(s2, a2), 2));
}

TEST(VaeEncode, BatchedEncodeMatchesSingle) {
  VaeModel vae({5, 3}, small_config(2), 5);
  const std::vector<int> s{0, 1, 2, 3, 4, 1}, a{0, 2, 1, 2, 0, 1};
  const auto all = vae.encode_all(StepView(s, a));
  ASSERT_EQ(all.size(), 6u);
  for (int t = 0; t < 6; ++t) expect_same_dist(all[t], vae.encode(StepView(s, a), t), 1e-12);
}

TEST(VaeEncode, PositionOutOfRange) {
  VaeModel vae({3, 2}, small_config(1), 1);
  const std::vector<int> s{0, 1}, a{0, 1};
  try {
    vae.encode(StepView(s, a), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
  EXPECT_THROW(vae.encode(StepView(s, a), -1), Error);
}

TEST(VaeDecode, DeltaRange) {
  VaeModel vae({3, 2}, small_config(2), 1);
  EXPECT_NO_THROW(vae.decode(0, 0, 0, 0));
  EXPECT_NO_THROW(vae.decode(0, 0, 0, 2));
  for (int dt : {-1, 3}) {
    try {
      vae.decode(0, 0, 0, dt);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DeltaOutOfRange);
    }
  }
}

TEST(VaeDecode, BatchedEqualsSingleCalls) {
  VaeModel vae({4, 3}, small_config(3), 9);
  const auto all = vae.decode_all(2, 1, 3);
  ASSERT_EQ(all.size(), 4u);
  for (int dt = 0; dt <= 3; ++dt) {
    const DecodedStep one = vae.decode(2, 1, 3, dt);
    EXPECT_LT((one.state_probs - all[dt].state_probs).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((one.action_probs - all[dt].action_probs).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(one.state_probs.sum(), 1.0, 1e-12);
    EXPECT_NEAR(one.action_probs.sum(), 1.0, 1e-12);
  }
}

TEST(VaeLoss, DuplicatedBatchHasSameMean) {
  VaeModel vae({4, 2}, small_config(2), 4);
  const std::vector<int> s{0, 1, 2, 3}, a{1, 0, 1, 0};
  const StepView view(s, a);
  const std::vector<VaeItem> one{{view, 1}};
  const std::vector<VaeItem> two{{view, 1}, {view, 1}};
  Rng rng(2);
  Matrix noise1(1, 4);
  for (Eigen::Index i = 0; i < 4; ++i) noise1(0, i) = rng.gumbel();
  Matrix noise2(2, 4);
  noise2.row(0) = noise1.row(0);
  noise2.row(1) = noise1.row(0);
  EXPECT_NEAR(vae.elbo_loss(one, noise1, 0.7, false), vae.elbo_loss(two, noise2, 0.7, false), 1e-12);
}

TEST(VaeLoss, EmptyBatchRejected) {
  VaeModel vae({4, 2}, small_config(2), 4);
  EXPECT_THROW(vae.elbo_loss({}, Matrix(0, 4), 1.0, false), Error);
}

TEST(VaeLoss, GradientMatchesFiniteDifferences) {
  for (int draw = 0; draw < 4; ++draw) {
    VaeConfig c = small_config(draw % 3, 3);
    c.embed_dim = 6;
    c.ffn_dim = 5;
    c.hidden_dim = 7;
    c.num_layers = 1 + draw % 2;
    VaeModel vae({4, 3}, c, 100 + draw);
    Rng rng(derive_seed(77, draw));
    std::vector<std::vector<int>> states, actions;
    for (int i = 0; i < 3; ++i) {
      std::vector<int> s(4), a(4);
      for (int t = 0; t < 4; ++t) {
        s[t] = static_cast<int>(rng.index(4));
        a[t] = static_cast<int>(rng.index(3));
      }
      states.push_back(s);
      actions.push_back(a);
    }
    std::vector<VaeItem> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({StepView(states[i], actions[i]), static_cast<int>(rng.index(4))});
    Matrix noise(3, 3);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.gumbel();
    const auto report = grad_check(
        [&](ParamStore&, bool with_grad) { return vae.elbo_loss(batch, noise, 0.8, with_grad); },
        vae.params(), 1e-4);
    EXPECT_TRUE(report.passed) << "draw " << draw << " max error " << report.max_rel_error;
  }
}

TEST(VaeTrain, DeterministicGivenSeed) {
  const auto data = random_dataset(3, 5, 2, 2, 20, 8);
  VaeConfig c = small_config(2);
  c.steps = 40;
  const auto a = train_vae(data, {5, 2}, c, 17);
  const auto b = train_vae(data, {5, 2}, c, 17);
  const auto ea = a.model.params().entries();
  const auto eb = b.model.params().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_TRUE(ea[i].value == eb[i].value) << ea[i].name;
  EXPECT_EQ(a.losses, b.losses);
}

TEST(VaeTrain, SmoothedLossDecreases) {
  const auto data = random_dataset(21, 6, 3, 2, 60, 10);
  VaeConfig c = small_config(3);
  c.steps = 600;
  const auto result = train_vae(data, {6, 3}, c, 5);
  double start = 0, end = 0;
  for (int i = 0; i < 100; ++i) {
    start += result.losses[i];
    end += result.losses[result.losses.size() - 1 - i];
  }
  EXPECT_LT(end, start);
}

TEST(VaeTrain, PredictsNextStateOnDeterministicMdp) {
  const MDPSpec mdp = random_mdp(8, 4, 2, 1, 0.5, 10);
  const TabularPolicy policy = deterministic_policy(2, {0, 1, 1, 0});
  const auto data = collect_unlabeled(mdp, policy, 20, 3);
  const auto result = train_vae(data, {4, 2}, small_config(2), 12);
  int hits = 0, total = 0;
  for (const auto& traj : data.trajectories) {
    const auto posts = result.model.encode_all(StepView(traj));
    for (std::size_t t = 0; t + 1 < traj.length(); ++t) {
      const DecodedStep next =
          result.model.decode(traj.states[t], traj.actions[t], posts[t].mode(), 1);
      Eigen::Index best;
      next.state_probs.maxCoeff(&best);
      hits += best == traj.states[t + 1];
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(hits) / total, 0.95);
}

TEST(VaeTrain, GamblingPosteriorSeparatesOutcomes) {
  const MDPSpec mdp = gambling_mdp();
  const auto data = collect_unlabeled(mdp, make_policy(mdp, "gambling-uniform"), 400, 4);
  const auto result = train_vae(data, {5, 3}, small_config(2), 6);
  using namespace gambling;
  const std::vector<int> good_s{kStart, kGood}, bad_s{kStart, kBad}, a{kRisky, kFinish};
  const RowVector q_good = result.model.encode(StepView(good_s, a), 0).probs();
  const RowVector q_bad = result.model.encode(StepView(bad_s, a), 0).probs();
  EXPECT_GT(total_variation(q_good, q_bad), 0.5);
}

TEST(VaeTrain, ZeroFutureLengthCollapsesToPrior) {
  const auto data = random_dataset(31, 6, 3, 3, 60, 10);
  const auto result = train_vae(data, {6, 3}, small_config(0), 2);
  std::vector<VaeItem> items;
  for (const auto& traj : data.trajectories)
    for (int t = 0; t < traj.length(); ++t) items.push_back({StepView(traj), t});
  EXPECT_LT(result.model.mean_kl(items), 0.05);
}

TEST(VaePrior, SamplingFrequencyAndEnumeration) {
  VaeModel vae({3, 2}, small_config(1, 4), 1);
  // Zero every prior weight so that the output bias alone sets the logits.
  for (auto& e : vae.params().entries())
    if (e.name.rfind("prior/", 0) == 0) e.value.setZero();
  const auto out_bias = vae.params().find("prior/l1/b");
  ASSERT_TRUE(out_bias.has_value());
  vae.params().value(*out_bias) << std::log(0.25), std::log(0.25), std::log(0.25), std::log(0.25);
  const RowVector p = vae.enumerate_prior(1, 0);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_NEAR(p[3], 0.25, 1e-12);
  Rng rng(123);
  const auto codes = vae.sample_prior(1, 0, 10000, rng);
  const double freq = std::count(codes.begin(), codes.end(), 3) / 10000.0;
  EXPECT_GE(freq, 0.235);
  EXPECT_LE(freq, 0.265);
  Rng again(123);
  EXPECT_EQ(vae.sample_prior(1, 0, 10000, again), codes);
}

TEST(VaeCheckpoint, RoundTripAndSidecar) {
  const auto data = random_dataset(3, 5, 2, 2, 10, 6);
  VaeConfig c = small_config(2);
  c.steps = 10;
  const auto trained = train_vae(data, {5, 2}, c, 1);
  const auto dir = std::filesystem::temp_directory_path() / "hpl_vae_ckpt";
  std::filesystem::remove_all(dir);
  const std::string hash = dataset_hash(data);
  trained.model.save(dir, 1, hash);
  const VaeModel loaded = VaeModel::load(dir);
  EXPECT_EQ(loaded.features(), trained.model.features());
  const auto ea = trained.model.params().entries();
  const auto eb = loaded.params().entries();
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_TRUE(ea[i].value == eb[i].value) << ea[i].name;
  std::ifstream in(dir / "vae.json");
  const auto sidecar = nlohmann::json::parse(in);
  EXPECT_EQ(sidecar.at("k"), 2);
  EXPECT_EQ(sidecar.at("K"), 4);
  EXPECT_EQ(sidecar.at("dataset_hash"), hash);
  EXPECT_EQ(hash.size(), 64u);
  std::filesystem::remove_all(dir);
}
