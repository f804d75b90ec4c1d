#pragma once

#include "forler/approximator.hpp"
#include "forler/env_suite.hpp"

#include <functional>
#include <vector>

namespace forler {

/// Twin critics with polyak-averaged targets. All four networks share one
/// shape and map a (state, action) row to a scalar.
struct CriticPair {
  ApproximatorParams q1;
  ApproximatorParams q2;
  ApproximatorParams q1_target;
  ApproximatorParams q2_target;
};

CriticPair make_critic_pair(int obs_dim, int act_dim, const std::vector<int>& hidden,
                            Rng& rng);

ApproximatorParams make_actor(int obs_dim, int act_dim, const std::vector<int>& hidden,
                              Rng& rng);

/// Evaluates one critic head on row-aligned states and actions.
Vector critic_values(const ApproximatorParams& critic, const Matrix& states,
                     const Matrix& actions);

/// Row-aligned batch scorer used by the rectifier and the server ensemble.
using QScorer = std::function<Vector(const Matrix& states, const Matrix& actions)>;

QScorer min_head_scorer(const CriticPair& critics);
QScorer min_head_target_scorer(const CriticPair& critics);

struct LocalLossConfig {
  Scalar omega_c = 5.0;       // conservative penalty weight
  Scalar alpha_1 = 1.0;       // pull toward the rectified action
  Scalar alpha_2 = 0.1;       // anchor to the round-start global actor
  Scalar lambda_td3bc = 2.5;  // behavior-cloning normalizer numerator
  Scalar gamma = 0.99;
  int mu_samples = 8;
  Scalar mu_noise_std = 0.2;
  Scalar action_low = -1.0;
  Scalar action_high = 1.0;
  // Test hook: draw the penalty's comparison actions from the batch itself,
  // which cancels the conservative term exactly.
  bool mu_uses_dataset_actions = false;
};

void validate(const LocalLossConfig& config);

/// target_j = r_j + gamma * (1 - terminal_j) * min(q1_target, q2_target)(s'_j, pi(s'_j)).
/// Throws if any target is non-finite.
Vector bellman_target(const CriticPair& critics, const ApproximatorParams& actor,
                      const Batch& batch, Scalar gamma);

struct CriticLoss {
  Scalar loss = 0.0;
  Vector grad_q1;
  Vector grad_q2;
};

/// Half mean squared Bellman error plus the conservative gap, summed over both
/// heads. Comparison actions: half actor plus Gaussian noise, half uniform.
CriticLoss cql_critic_loss(const CriticPair& critics, const ApproximatorParams& actor,
                           const Batch& batch, const LocalLossConfig& config, Rng& rng);

struct ActorLoss {
  Scalar loss = 0.0;
  Vector grad;
};

/// -mean min-head Q(s, pi(s)) + alpha_1 * mean |pi(s) - rectified|^2
/// + alpha_2 * mean |pi(s) - pi_0(s)|^2.
ActorLoss rectified_actor_loss(const ApproximatorParams& actor,
                               const CriticPair& critics, const Batch& batch,
                               const Matrix& rectified_actions,
                               const ApproximatorParams& global_actor_snapshot,
                               const LocalLossConfig& config);

/// lambda = alpha_bc / mean |min-head Q(s, a)| over the batch's own actions.
Scalar td3bc_lambda(const CriticPair& critics, const Batch& batch, Scalar alpha_bc);

/// -lambda * mean min-head Q(s, pi(s)) + mean |pi(s) - a|^2.
ActorLoss td3bc_actor_loss(const ApproximatorParams& actor, const CriticPair& critics,
                           const Batch& batch, Scalar lambda);

}  // namespace forler
