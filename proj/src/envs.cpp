#include "hpl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hpl/error.hpp"
#include "hpl/rng.hpp"

namespace hpl {

namespace {

constexpr double kProbTol = 1e-9;

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorCode::InvalidDimension, what);
}

std::vector<std::vector<std::vector<double>>> zero_transitions(int s, int a) {
  return std::vector(s, std::vector(a, std::vector<double>(s, 0.0)));
}

}  // namespace

void MDPSpec::validate() const {
  require(num_states >= 1 && num_actions >= 1, "empty state or action space");
  require(static_cast<int>(transition.size()) == num_states, "transition: wrong state count");
  require(static_cast<int>(reward.size()) == num_states, "reward: wrong state count");
  require(static_cast<int>(terminal.size()) == num_states, "terminal: wrong state count");
  require(static_cast<int>(initial_dist.size()) == num_states, "initial_dist: wrong size");
  require(horizon >= 1, "horizon must be >= 1");
  for (int s = 0; s < num_states; ++s) {
    require(static_cast<int>(transition[s].size()) == num_actions, "transition: wrong action count");
    require(static_cast<int>(reward[s].size()) == num_actions, "reward: wrong action count");
    for (int a = 0; a < num_actions; ++a) {
      const auto& row = transition[s][a];
      require(static_cast<int>(row.size()) == num_states, "transition: wrong next-state count");
      double total = 0.0;
      for (double p : row) {
        require(p >= 0.0 && p <= 1.0, "transition probability outside [0, 1]");
        total += p;
      }
      require(std::abs(total - 1.0) <= kProbTol, "transition row does not sum to 1");
      require(std::isfinite(reward[s][a]), "non-finite reward");
      if (terminal[s]) {
        require(row[s] == 1.0 && reward[s][a] == 0.0,
                "terminal states must self-loop with zero reward");
      }
    }
  }
  double total = 0.0;
  for (double p : initial_dist) {
    require(p >= 0.0 && p <= 1.0, "initial probability outside [0, 1]");
    total += p;
  }
  require(std::abs(total - 1.0) <= kProbTol, "initial_dist does not sum to 1");
}

nlohmann::json to_json(const MDPSpec& mdp) {
  return nlohmann::json{{"num_states", mdp.num_states},     {"num_actions", mdp.num_actions},
                        {"transition", mdp.transition},     {"reward", mdp.reward},
                        {"terminal", mdp.terminal},         {"initial_dist", mdp.initial_dist},
                        {"horizon", mdp.horizon}};
}

MDPSpec mdp_from_json(const nlohmann::json& j) {
  MDPSpec mdp;
  try {
    mdp.num_states = j.at("num_states").get<int>();
    mdp.num_actions = j.at("num_actions").get<int>();
    mdp.transition = j.at("transition").get<decltype(mdp.transition)>();
    mdp.reward = j.at("reward").get<decltype(mdp.reward)>();
    mdp.terminal = j.at("terminal").get<std::vector<bool>>();
    mdp.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    mdp.horizon = j.at("horizon").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Schema, std::string("MDP document: ") + e.what());
  }
  mdp.validate();
  return mdp;
}

MDPSpec gambling_mdp() {
  using namespace gambling;
  MDPSpec mdp;
  mdp.num_states = 5;
  mdp.num_actions = 3;
  mdp.horizon = 2;
  mdp.transition = zero_transitions(5, 3);
  mdp.reward.assign(5, std::vector<double>(3, 0.0));
  mdp.terminal = {false, false, false, false, true};
  mdp.initial_dist = {1.0, 0.0, 0.0, 0.0, 0.0};

  mdp.transition[kStart][kRisky][kGood] = 0.1;
  mdp.transition[kStart][kRisky][kBad] = 0.9;
  mdp.transition[kStart][kSafe][kAvg] = 1.0;
  mdp.transition[kStart][kFinish][kAvg] = 1.0;

  const double outcome_reward[] = {0.0, 1.0, -1.0, 0.0};
  for (int s : {kGood, kBad, kAvg}) {
    for (int a = 0; a < 3; ++a) {
      mdp.transition[s][a][kTerminal] = 1.0;
      mdp.reward[s][a] = outcome_reward[s];
    }
  }
  for (int a = 0; a < 3; ++a) mdp.transition[kTerminal][a][kTerminal] = 1.0;
  return mdp;
}

MDPSpec random_mdp(std::uint64_t seed, int num_states, int num_actions, int branching,
                   double reward_sparsity, int horizon) {
  require(num_states >= 2, "random_mdp needs at least 2 states");
  require(num_actions >= 2, "random_mdp needs at least 2 actions");
  require(branching >= 1 && branching <= num_states, "branching must be in [1, num_states]");
  require(reward_sparsity >= 0.0 && reward_sparsity <= 1.0, "reward_sparsity must be in [0, 1]");
  require(horizon >= 1, "horizon must be >= 1");

  Rng rng(seed);
  MDPSpec mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.horizon = horizon;
  mdp.transition = zero_transitions(num_states, num_actions);
  mdp.terminal.assign(num_states, false);
  mdp.initial_dist.assign(num_states, 1.0 / num_states);

  std::vector<int> order(num_states);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      std::iota(order.begin(), order.end(), 0);
      // Partial Fisher-Yates: the first `branching` entries are the support.
      for (int i = 0; i < branching; ++i) {
        const int j = i + static_cast<int>(rng.index(num_states - i));
        std::swap(order[i], order[j]);
      }
      std::vector<double> weights(branching);
      double total = 0.0;
      for (double& w : weights) {
        w = 0.05 + rng.uniform();
        total += w;
      }
      auto& row = mdp.transition[s][a];
      for (int i = 0; i < branching; ++i) row[order[i]] = weights[i] / total;
      // Renormalize so the row sums to 1 to the last bit we can manage.
      const double sum = std::accumulate(row.begin(), row.end(), 0.0);
      for (double& p : row) p /= sum;
    }
  }

  const int cells = num_states * num_actions;
  const int nonzero = static_cast<int>(std::lround(reward_sparsity * cells));
  std::vector<double> values(cells);
  for (double& v : values) v = rng.normal();
  std::vector<int> cell_order(cells);
  std::iota(cell_order.begin(), cell_order.end(), 0);
  for (int i = 0; i < cells - 1; ++i) {
    const int j = i + static_cast<int>(rng.index(cells - i));
    std::swap(cell_order[i], cell_order[j]);
  }
  std::vector<bool> keep(cells, false);
  for (int i = 0; i < nonzero; ++i) keep[cell_order[i]] = true;
  mdp.reward.assign(num_states, std::vector<double>(num_actions, 0.0));
  for (int c = 0; c < cells; ++c)
    if (keep[c]) mdp.reward[c / num_actions][c % num_actions] = values[c];
  return mdp;
}

Eigen::VectorXd bellman_optimality(const MDPSpec& mdp, const Eigen::VectorXd& values,
                                   double discount, Eigen::MatrixXd* q_out) {
  Eigen::MatrixXd q(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      double expected = 0.0;
      const auto& row = mdp.transition[s][a];
      for (int s2 = 0; s2 < mdp.num_states; ++s2) expected += row[s2] * values[s2];
      q(s, a) = mdp.reward[s][a] + discount * expected;
    }
  }
  Eigen::VectorXd out(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s)
    out[s] = mdp.terminal[s] ? 0.0 : q.row(s).maxCoeff();
  if (q_out) *q_out = std::move(q);
  return out;
}

ValueIterationResult value_iteration(const MDPSpec& mdp, double discount, double tol) {
  if (!(discount >= 0.0 && discount <= 1.0))
    throw Error(ErrorCode::InvalidDimension, "discount must be in [0, 1]");
  ValueIterationResult result;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.num_states);
  if (discount < 1.0) {
    for (;;) {
      Eigen::VectorXd next = bellman_optimality(mdp, v, discount);
      ++result.iterations;
      const double residual = (next - v).cwiseAbs().maxCoeff();
      v = std::move(next);
      if (residual <= tol) break;
    }
  } else {
    for (int h = 0; h < mdp.horizon; ++h) {
      v = bellman_optimality(mdp, v, discount);
      ++result.iterations;
    }
  }
  bellman_optimality(mdp, v, discount, &result.q_values);
  result.values = std::move(v);
  result.policy.resize(mdp.num_states);
  for (int s = 0; s < mdp.num_states; ++s) {
    int best = 0;
    for (int a = 1; a < mdp.num_actions; ++a)
      if (result.q_values(s, a) > result.q_values(s, best) + 1e-12) best = a;
    result.policy[s] = best;
  }
  return result;
}

TabularPolicy deterministic_policy(int num_actions, const std::vector<int>& actions) {
  TabularPolicy p = TabularPolicy::Zero(static_cast<Eigen::Index>(actions.size()), num_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) p(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  return p;
}

std::vector<Trajectory> rollout(const MDPSpec& mdp, const TabularPolicy& policy,
                                std::uint64_t seed, int num_episodes) {
  if (num_episodes < 1) throw Error(ErrorCode::InvalidDimension, "num_episodes must be >= 1");
  if (policy.rows() != mdp.num_states || policy.cols() != mdp.num_actions)
    throw Error(ErrorCode::ShapeMismatch, "policy shape does not match MDP");
  Rng rng(seed);
  std::vector<Trajectory> out;
  out.reserve(num_episodes);
  std::vector<double> action_weights(mdp.num_actions);
  for (int e = 0; e < num_episodes; ++e) {
    Trajectory traj;
    traj.rewards.emplace();
    int s = static_cast<int>(rng.categorical(mdp.initial_dist));
    for (int t = 0; t < mdp.horizon && !mdp.terminal[s]; ++t) {
      for (int a = 0; a < mdp.num_actions; ++a) action_weights[a] = policy(s, a);
      const int a = static_cast<int>(rng.categorical(action_weights));
      traj.states.push_back(s);
      traj.actions.push_back(a);
      traj.rewards->push_back(mdp.reward[s][a]);
      s = static_cast<int>(rng.categorical(mdp.transition[s][a]));
    }
    traj.final_state = s;
    traj.terminated = mdp.terminal[s];
    out.push_back(std::move(traj));
  }
  return out;
}

TabularPolicy make_policy(const MDPSpec& mdp, const std::string& id) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  auto arg = [&](std::string_view prefix) -> std::optional<double> {
    if (id.rfind(prefix, 0) != 0) return std::nullopt;
    try {
      return std::stod(id.substr(prefix.size()));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Config, "bad policy id: " + id);
    }
  };
  const TabularPolicy uniform = TabularPolicy::Constant(S, A, 1.0 / A);
  if (id == "uniform") return uniform;

  const auto optimal_q = [&] { return value_iteration(mdp, 0.99, 1e-9); };
  if (id == "optimal") return deterministic_policy(A, optimal_q().policy);
  if (auto eps = arg("noisy:")) {
    if (*eps < 0.0 || *eps > 1.0) throw Error(ErrorCode::Config, "noise must be in [0, 1]: " + id);
    return (1.0 - *eps) * deterministic_policy(A, optimal_q().policy) + *eps * uniform;
  }
  if (auto temp = arg("softmax:")) {
    if (*temp <= 0.0) throw Error(ErrorCode::Config, "temperature must be > 0: " + id);
    const auto vi = optimal_q();
    TabularPolicy p(S, A);
    for (int s = 0; s < S; ++s) {
      const double m = vi.q_values.row(s).maxCoeff();
      for (int a = 0; a < A; ++a) p(s, a) = std::exp((vi.q_values(s, a) - m) / *temp);
      p.row(s) /= p.row(s).sum();
    }
    return p;
  }
  if (id == "gambling-uniform") {
    if (S != 5 || A != 3) throw Error(ErrorCode::Config, "gambling-uniform needs the gambling MDP");
    TabularPolicy p = deterministic_policy(A, std::vector<int>(S, gambling::kFinish));
    p.row(gambling::kStart) << 0.5, 0.5, 0.0;
    return p;
  }
  if (auto action = arg("action:")) {
    const int a = static_cast<int>(*action);
    if (a < 0 || a >= A) throw Error(ErrorCode::Config, "action out of range: " + id);
    return deterministic_policy(A, std::vector<int>(S, a));
  }
  throw Error(ErrorCode::Config, "unknown policy id: " + id);
}

}  // namespace hpl
