#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace hpl {

/// Tabular MDP used both as the simulator and as ground truth for oracles.
struct MDPSpec {
  int num_states = 0;
  int num_actions = 0;
  /// transition[s][a][s'].
  std::vector<std::vector<std::vector<double>>> transition;
  /// reward[s][a]; hidden from learners.
  std::vector<std::vector<double>> reward;
  std::vector<bool> terminal;
  std::vector<double> initial_dist;
  int horizon = 0;

  /// Throws Error(InvalidDimension) when any structural invariant fails.
  void validate() const;

  bool operator==(const MDPSpec&) const = default;
};

nlohmann::json to_json(const MDPSpec& mdp);
MDPSpec mdp_from_json(const nlohmann::json& j);

/// State and action indices of the gambling MDP.
namespace gambling {
inline constexpr int kStart = 0;
inline constexpr int kGood = 1;
inline constexpr int kBad = 2;
inline constexpr int kAvg = 3;
inline constexpr int kTerminal = 4;
inline constexpr int kRisky = 0;  // a1
inline constexpr int kSafe = 1;   // a2
inline constexpr int kFinish = 2; // a3
}  // namespace gambling

/// Five-state gambling MDP: from the start state the risky action reaches a
/// rewarding state w.p. 0.1 and a penalizing state otherwise; the safe action
/// always reaches a neutral state. Outcome states end the episode with reward
/// +1 / -1 / 0.
///
/// The transition tensor is total over (state, action). Actions that the
/// diagram does not define alias a defined one: a3 at the start state behaves
/// like a2, and a1/a2 at the outcome states behave like a3.
MDPSpec gambling_mdp();

/// Seeded random MDP. Each (s, a) row has `branching` nonzero next states with
/// normalized uniform weights. A `reward_sparsity` fraction of the reward
/// entries are drawn from N(0, 1); the rest are zero. No terminal states,
/// uniform initial distribution.
MDPSpec random_mdp(std::uint64_t seed, int num_states, int num_actions, int branching,
                   double reward_sparsity, int horizon = 20);

/// Row-stochastic matrix: policy(s, a) = pi(a | s).
using TabularPolicy = Eigen::MatrixXd;

struct ValueIterationResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd q_values;
  std::vector<int> policy;
  int iterations = 0;
};

/// One application of the Bellman optimality operator.
Eigen::VectorXd bellman_optimality(const MDPSpec& mdp, const Eigen::VectorXd& values,
                                   double discount, Eigen::MatrixXd* q_out = nullptr);

/// Optimal values by value iteration. With discount < 1 iterates until the
/// Bellman residual is at most `tol`; with discount == 1 runs `horizon`
/// backups from zero (finite-horizon evaluation). Greedy ties resolve to the
/// lowest action index.
ValueIterationResult value_iteration(const MDPSpec& mdp, double discount, double tol = 1e-10);

TabularPolicy deterministic_policy(int num_actions, const std::vector<int>& actions);

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  /// Ground-truth rewards; only populated for oracle-side copies.
  std::optional<std::vector<double>> rewards;
  /// State reached after the last action.
  int final_state = -1;
  /// True when the episode ended by entering a terminal state.
  bool terminated = false;

  std::size_t length() const { return actions.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// Sample episodes. Each episode starts from initial_dist and runs until a
/// terminal state is entered or `horizon` steps have been taken.
std::vector<Trajectory> rollout(const MDPSpec& mdp, const TabularPolicy& policy,
                                std::uint64_t seed, int num_episodes);

/// Named behavior policies:
///   uniform            uniform over actions
///   optimal            greedy in Q* (discount 0.99, or 1 for MDPs with terminals)
///   noisy:<eps>        (1 - eps) * optimal + eps * uniform
///   softmax:<temp>     Boltzmann over Q* with the given temperature
///   action:<i>         always action i
///   gambling-uniform   gambling MDP only: a1/a2 with equal probability at
///                      the start state, a3 at the outcome states
TabularPolicy make_policy(const MDPSpec& mdp, const std::string& id);

}  // namespace hpl
