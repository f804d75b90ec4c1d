#include "forler/offline_core.hpp"

#include <cmath>
#include <stdexcept>

namespace forler {

namespace {

Matrix join_rows(const Matrix& states, const Matrix& actions) {
  if (states.rows() != actions.rows()) {
    throw std::invalid_argument("state and action batches must have equal rows");
  }
  Matrix joined(states.rows(), states.cols() + actions.cols());
  joined.leftCols(states.cols()) = states;
  joined.rightCols(actions.cols()) = actions;
  return joined;
}

void check_batch(const Batch& batch) {
  if (batch.states.rows() == 0) {
    throw std::invalid_argument("batch is empty");
  }
  if (batch.actions.rows() != batch.states.rows() ||
      batch.rewards.size() != batch.states.rows() ||
      batch.next_states.rows() != batch.states.rows() ||
      batch.terminals.size() != batch.states.rows()) {
    throw std::invalid_argument("batch fields disagree on row count");
  }
}

}  // namespace

CriticPair make_critic_pair(int obs_dim, int act_dim, const std::vector<int>& hidden,
                            Rng& rng) {
  const auto shape =
      mlp_shape(obs_dim + act_dim, hidden, 1, Activation::relu, Activation::identity);
  CriticPair critics;
  critics.q1 = random_params(shape, rng);
  critics.q2 = random_params(shape, rng);
  critics.q1_target = critics.q1;
  critics.q2_target = critics.q2;
  return critics;
}

ApproximatorParams make_actor(int obs_dim, int act_dim, const std::vector<int>& hidden,
                              Rng& rng) {
  return random_params(
      mlp_shape(obs_dim, hidden, act_dim, Activation::relu, Activation::tanh), rng);
}

Vector critic_values(const ApproximatorParams& critic, const Matrix& states,
                     const Matrix& actions) {
  return forward_batch(critic, join_rows(states, actions)).col(0);
}

QScorer min_head_scorer(const CriticPair& critics) {
  const CriticPair* c = &critics;
  return [c](const Matrix& states, const Matrix& actions) {
    return critic_values(c->q1, states, actions)
        .cwiseMin(critic_values(c->q2, states, actions))
        .eval();
  };
}

QScorer min_head_target_scorer(const CriticPair& critics) {
  const CriticPair* c = &critics;
  return [c](const Matrix& states, const Matrix& actions) {
    return critic_values(c->q1_target, states, actions)
        .cwiseMin(critic_values(c->q2_target, states, actions))
        .eval();
  };
}

void validate(const LocalLossConfig& config) {
  const Scalar coeffs[] = {config.omega_c, config.alpha_1, config.alpha_2,
                           config.lambda_td3bc};
  for (Scalar c : coeffs) {
    if (!std::isfinite(c) || c < 0.0) {
      throw std::invalid_argument("loss coefficients must be finite and non-negative");
    }
  }
  if (config.gamma <= 0.0 || config.gamma >= 1.0) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
  if (config.mu_samples < 1) {
    throw std::invalid_argument("mu_samples must be at least 1");
  }
  if (!(config.action_low < config.action_high) || config.mu_noise_std < 0.0) {
    throw std::invalid_argument("bad action box or noise std");
  }
}

Vector bellman_target(const CriticPair& critics, const ApproximatorParams& actor,
                      const Batch& batch, Scalar gamma) {
  check_batch(batch);
  const Matrix next_actions = forward_batch(actor, batch.next_states);
  const Vector next_q =
      critic_values(critics.q1_target, batch.next_states, next_actions)
          .cwiseMin(critic_values(critics.q2_target, batch.next_states, next_actions));
  Vector target = batch.rewards.array() +
                  gamma * (1.0 - batch.terminals.array()) * next_q.array();
  if (!target.allFinite()) {
    throw std::runtime_error("bellman target is non-finite");
  }
  return target;
}

CriticLoss cql_critic_loss(const CriticPair& critics, const ApproximatorParams& actor,
                           const Batch& batch, const LocalLossConfig& config,
                           Rng& rng) {
  validate(config);
  check_batch(batch);
  const Eigen::Index n = batch.states.rows();
  const Vector target = bellman_target(critics, actor, batch, config.gamma);

  // Comparison actions for the conservative gap, mu_samples per state: half
  // actor plus noise, half uniform. Drawing them from the batch itself makes
  // the gap identically zero, so that path skips the penalty entirely.
  const bool penalize = config.omega_c != 0.0 && !config.mu_uses_dataset_actions;
  const int m = config.mu_samples;
  Matrix mu_inputs;
  if (penalize) {
    const Eigen::Index act_dim = batch.actions.cols();
    Matrix mu_states(n * m, batch.states.cols());
    Matrix mu_actions(n * m, act_dim);
    const Matrix actor_actions = forward_batch(actor, batch.states);
    std::normal_distribution<Scalar> noise(0.0, 1.0);
    std::uniform_real_distribution<Scalar> box(config.action_low, config.action_high);
    const int actor_share = m / 2;
    for (int j = 0; j < m; ++j) {
      mu_states.middleRows(j * n, n) = batch.states;
      auto block = mu_actions.middleRows(j * n, n);
      if (j < actor_share) {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index d = 0; d < act_dim; ++d) {
            block(i, d) = std::clamp(
                actor_actions(i, d) + config.mu_noise_std * noise(rng),
                config.action_low, config.action_high);
          }
        }
      } else {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index d = 0; d < act_dim; ++d) block(i, d) = box(rng);
        }
      }
    }
    mu_inputs = join_rows(mu_states, mu_actions);
  }

  CriticLoss out;
  const Matrix data_inputs = join_rows(batch.states, batch.actions);
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
  const Scalar inv_nm = 1.0 / static_cast<Scalar>(n * m);
  for (int head = 0; head < 2; ++head) {
    const ApproximatorParams& q = head == 0 ? critics.q1 : critics.q2;
    const Vector data_q = forward_batch(q, data_inputs).col(0);
    const Vector residual = data_q - target;
    out.loss += 0.5 * residual.squaredNorm() * inv_n;
    Matrix data_upstream = residual * inv_n;
    if (penalize) {
      const Vector mu_q = forward_batch(q, mu_inputs).col(0);
      out.loss += config.omega_c * (mu_q.mean() - data_q.mean());
      data_upstream.array() -= config.omega_c * inv_n;
    }
    Vector grad = backprop_batch(q, data_inputs, data_upstream).param_grad;
    if (penalize) {
      grad += backprop_batch(q, mu_inputs,
                             Matrix::Constant(n * m, 1, config.omega_c * inv_nm))
                  .param_grad;
    }
    if (head == 0) {
      out.grad_q1 = std::move(grad);
    } else {
      out.grad_q2 = std::move(grad);
    }
  }
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("critic loss is non-finite");
  }
  return out;
}

namespace {

// Gradient of -mean min-head Q(s, pi(s)) with respect to the actor's output,
// plus the scalar loss term itself.
struct MinHeadQ {
  Scalar neg_mean_q;
  Matrix d_actions;  // d(-mean minQ)/d(pi(s))
};

MinHeadQ min_head_q_through_actions(const CriticPair& critics, const Matrix& states,
                                    const Matrix& actions, Scalar weight) {
  const Eigen::Index n = states.rows();
  const Matrix inputs = join_rows(states, actions);
  const Vector q1 = forward_batch(critics.q1, inputs).col(0);
  const Vector q2 = forward_batch(critics.q2, inputs).col(0);
  Matrix up1 = Matrix::Zero(n, 1);
  Matrix up2 = Matrix::Zero(n, 1);
  const Scalar scale = -weight / static_cast<Scalar>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (q1(i) <= q2(i)) {
      up1(i, 0) = scale;
    } else {
      up2(i, 0) = scale;
    }
  }
  MinHeadQ out;
  out.neg_mean_q = -weight * q1.cwiseMin(q2).mean();
  const Matrix g1 = backprop_batch(critics.q1, inputs, up1).input_grad;
  const Matrix g2 = backprop_batch(critics.q2, inputs, up2).input_grad;
  out.d_actions = g1.rightCols(actions.cols()) + g2.rightCols(actions.cols());
  return out;
}

}  // namespace

ActorLoss rectified_actor_loss(const ApproximatorParams& actor,
                               const CriticPair& critics, const Batch& batch,
                               const Matrix& rectified_actions,
                               const ApproximatorParams& global_actor_snapshot,
                               const LocalLossConfig& config) {
  validate(config);
  check_batch(batch);
  const Eigen::Index n = batch.states.rows();
  if (rectified_actions.rows() != n ||
      rectified_actions.cols() != batch.actions.cols()) {
    throw std::invalid_argument("rectified actions do not align with the batch");
  }
  const Matrix pi = forward_batch(actor, batch.states);
  const Matrix pi0 = forward_batch(global_actor_snapshot, batch.states);
  const MinHeadQ q = min_head_q_through_actions(critics, batch.states, pi, 1.0);
  const Matrix d_rect = pi - rectified_actions;
  const Matrix d_anchor = pi - pi0;
  ActorLoss out;
  out.loss = q.neg_mean_q +
             config.alpha_1 * d_rect.rowwise().squaredNorm().mean() +
             config.alpha_2 * d_anchor.rowwise().squaredNorm().mean();
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
  const Matrix d_pi = q.d_actions + 2.0 * inv_n * config.alpha_1 * d_rect +
                      2.0 * inv_n * config.alpha_2 * d_anchor;
  out.grad = backprop_batch(actor, batch.states, d_pi).param_grad;
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("actor loss is non-finite");
  }
  return out;
}

Scalar td3bc_lambda(const CriticPair& critics, const Batch& batch, Scalar alpha_bc) {
  check_batch(batch);
  const Vector q = min_head_scorer(critics)(batch.states, batch.actions);
  const Scalar denom = std::max(q.cwiseAbs().mean(), 1e-6);
  return alpha_bc / denom;
}

ActorLoss td3bc_actor_loss(const ApproximatorParams& actor, const CriticPair& critics,
                           const Batch& batch, Scalar lambda) {
  check_batch(batch);
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw std::invalid_argument("lambda must be finite and non-negative");
  }
  const Eigen::Index n = batch.states.rows();
  const Matrix pi = forward_batch(actor, batch.states);
  const MinHeadQ q = min_head_q_through_actions(critics, batch.states, pi, lambda);
  const Matrix d_bc = pi - batch.actions;
  ActorLoss out;
  out.loss = q.neg_mean_q + d_bc.rowwise().squaredNorm().mean();
  const Matrix d_pi =
      q.d_actions + 2.0 / static_cast<Scalar>(n) * d_bc;
  out.grad = backprop_batch(actor, batch.states, d_pi).param_grad;
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("actor loss is non-finite");
  }
  return out;
}

}  // namespace forler
