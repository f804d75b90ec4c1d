#pragma once

#include "forler/env_suite.hpp"

#include <optional>
#include <string>
#include <vector>

namespace forler {

/// Row-stochastic action probabilities indexed (state, action).
struct TabularPolicy {
  Matrix probs;
};

void validate(const TabularMDP& mdp, const TabularPolicy& policy);

TabularPolicy deterministic_policy(const std::vector<int>& actions, int n_actions);
TabularPolicy epsilon_greedy_policy(const std::vector<int>& greedy, int n_actions,
                                    Scalar epsilon);

/// Deterministic policy read off a trained actor by snapping its embedded
/// output at every one-hot state.
TabularPolicy tabular_policy_from_actor(const ApproximatorParams& actor,
                                        int n_states, int n_actions);

struct PolicyValue {
  Vector v;
  Scalar j = 0.0;
};

/// Solves the linear Bellman system exactly; the residual is checked against
/// 1e-10. j weights v by the initial distribution.
PolicyValue exact_policy_value(const TabularMDP& mdp, const TabularPolicy& policy);

/// Discounted state-visitation distribution (1-gamma) mu0' (I - gamma P_pi)^-1.
Vector visitation_distribution(const TabularMDP& mdp, const TabularPolicy& policy);

/// Maximum-likelihood tabular model of a dataset. Unvisited (s, a) pairs fall
/// back to a zero-reward self-loop. Counts states by their raw index.
TabularMDP empirical_mdp(const OfflineDataset& dataset, int n_states, int n_actions,
                         Scalar gamma, const Vector& initial_distribution);

struct BoundReport {
  Scalar alpha = 0.0;
  Scalar eta = 0.0;
  Scalar gamma = 0.0;
  // False when the behavior assigns zero probability to a selected action.
  bool applicable = false;
  Scalar j_pi_star = 0.0;
  Scalar j_behavior = 0.0;
  Scalar lhs = 0.0;
  Scalar term_d = 0.0;
  Scalar term_quad_pi = 0.0;
  Scalar term_quad_beta = 0.0;
  Scalar rhs = 0.0;
  bool holds = false;
  Vector density_ratio_gap;  // per-state D value
  Vector value_shift;        // per-state V - alpha * D diagnostic
  // Same bound with visitation terms taken under an empirical model.
  bool has_empirical = false;
  Scalar term_d_empirical = 0.0;
  Scalar term_quad_pi_empirical = 0.0;
  Scalar term_quad_beta_empirical = 0.0;
  Scalar rhs_empirical = 0.0;
  bool holds_empirical = false;
};

/// Safe-improvement bound: j_pi_star - j_behavior against
/// alpha/(1-gamma) E_{d^pi*}[D] + eta/(1-eta) E_{d^pi*}[(pi*(s)-mean_beta(s))^2]
/// - eta/(1-eta) E_{d^beta, a~beta}[(a-mean_beta(s))^2], actions compared
/// through the supplied scalar embedding. pi_star must be deterministic.
BoundReport check_theorem1(const TabularMDP& mdp, const TabularPolicy& pi_star,
                           const TabularPolicy& behavior,
                           const Vector& action_embedding, Scalar alpha, Scalar eta,
                           const TabularMDP* empirical = nullptr);

std::string bound_report_text(const BoundReport& report);

}  // namespace forler
