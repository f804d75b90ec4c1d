#include "forler/rectifier.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace forler {

void validate(const RectifierConfig& config) {
  if (config.population < 2) {
    throw std::invalid_argument("population must be at least 2");
  }
  if (config.iterations < 1 || config.delta < 1) {
    throw std::invalid_argument("iterations and delta must be positive");
  }
  if (config.beta_w <= 0.0 || config.init_std <= 0.0 || config.std_floor < 0.0) {
    throw std::invalid_argument("beta_w and init_std must be positive");
  }
  if (!(config.action_low < config.action_high)) {
    throw std::invalid_argument("bad action box");
  }
}

Vector softmax_weights(const Vector& q_values, Scalar beta_w) {
  if (q_values.size() == 0) {
    throw std::invalid_argument("softmax over an empty vector");
  }
  if (!q_values.allFinite()) {
    throw std::invalid_argument("softmax input must be finite");
  }
  const Vector scaled = beta_w * q_values;
  Vector w = (scaled.array() - scaled.maxCoeff()).exp();
  w /= w.sum();
  return w;
}

SearchDistribution distribution_update(const Matrix& candidates,
                                       const Vector& weights) {
  if (candidates.rows() != weights.size() || candidates.rows() == 0) {
    throw std::invalid_argument("candidate rows must match weight count");
  }
  SearchDistribution dist;
  dist.mean = candidates.transpose() * weights;
  const Matrix centered = candidates.rowwise() - dist.mean.transpose();
  dist.std = std::sqrt(centered.rowwise().squaredNorm().dot(weights));
  return dist;
}

namespace {

struct BestTracker {
  Matrix actions;
  Vector scores;

  BestTracker(const Matrix& seed_actions, const Vector& seed_scores)
      : actions(seed_actions), scores(seed_scores) {}

  void offer(Eigen::Index row, const Matrix& source, Eigen::Index source_row,
             Scalar score) {
    if (score > scores(row)) {
      scores(row) = score;
      actions.row(row) = source.row(source_row);
    }
  }
};

}  // namespace

FullSearchResult full_search(const QScorer& scorer, const Matrix& states,
                             const Matrix& actor_actions,
                             const RectifierConfig& config, Rng& rng) {
  validate(config);
  const Eigen::Index b = states.rows();
  const Eigen::Index d = actor_actions.cols();
  if (actor_actions.rows() != b || b == 0) {
    throw std::invalid_argument("actor actions do not align with the state batch");
  }
  const int n = config.population;

  // The actor's own action is the incumbent; candidates must beat it strictly.
  BestTracker best(actor_actions, scorer(states, actor_actions));

  std::vector<SearchDistribution> dists(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    dists[static_cast<std::size_t>(i)] = {actor_actions.row(i).transpose(),
                                          config.init_std};
  }

  Matrix rep_states(b * n, states.cols());
  for (int j = 0; j < n; ++j) rep_states.middleRows(j * b, b) = states;
  Matrix candidates(b * n, d);
  std::normal_distribution<Scalar> normal(0.0, 1.0);

  for (int it = 0; it < config.iterations; ++it) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& dist = dists[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) {
        for (Eigen::Index c = 0; c < d; ++c) {
          candidates(j * b + i, c) =
              std::clamp(dist.mean(c) + dist.std * normal(rng), config.action_low,
                         config.action_high);
        }
      }
    }
    const Vector scores = scorer(rep_states, candidates);
    for (int j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < b; ++i) {
        best.offer(i, candidates, j * b + i, scores(j * b + i));
      }
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      Vector q(n);
      Matrix pop(n, d);
      for (int j = 0; j < n; ++j) {
        q(j) = scores(j * b + i);
        pop.row(j) = candidates.row(j * b + i);
      }
      SearchDistribution next = distribution_update(pop, softmax_weights(q, config.beta_w));
      next.std = std::max(next.std, config.std_floor);
      dists[static_cast<std::size_t>(i)] = std::move(next);
    }
  }

  FullSearchResult out;
  out.actions = std::move(best.actions);
  out.q_evals = static_cast<std::uint64_t>(b) *
                (static_cast<std::uint64_t>(config.iterations) *
                     static_cast<std::uint64_t>(n) +
                 1);
  return out;
}

FullSearchResult full_search(const CriticPair& critics, const Matrix& states,
                             const ApproximatorParams& actor,
                             const RectifierConfig& config, Rng& rng) {
  return full_search(min_head_scorer(critics), states, forward_batch(actor, states),
                     config, rng);
}

FullSearchResult exhaustive_search(const QScorer& scorer, const Matrix& states,
                                   int n_actions) {
  if (n_actions < 1 || states.rows() == 0) {
    throw std::invalid_argument("need states and at least one action");
  }
  const Eigen::Index b = states.rows();
  const Vector embed = action_embedding(n_actions);
  FullSearchResult out;
  out.actions = Matrix::Constant(b, 1, embed(0));
  Vector best_scores = scorer(states, out.actions);
  for (int a = 1; a < n_actions; ++a) {
    const Vector scores = scorer(states, Matrix::Constant(b, 1, embed(a)));
    for (Eigen::Index i = 0; i < b; ++i) {
      if (scores(i) > best_scores(i)) {
        best_scores(i) = scores(i);
        out.actions(i, 0) = embed(a);
      }
    }
  }
  out.q_evals = static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(n_actions);
  return out;
}

namespace {

// Non-refresh step: keep the better of {cached action, actor action} per state.
// The actor's action wins ties.
Matrix reuse_step(RectifiedCache& cache, const QScorer& scorer, const Matrix& states,
                  const Matrix& actor_actions) {
  if (cache.cached_actions.rows() != states.rows() ||
      cache.cached_actions.cols() != actor_actions.cols()) {
    throw std::invalid_argument(
        "rectifier cache does not align with the minibatch; refresh required");
  }
  const Vector cached_q = scorer(states, cache.cached_actions);
  const Vector actor_q = scorer(states, actor_actions);
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    if (actor_q(i) >= cached_q(i)) {
      cache.cached_actions.row(i) = actor_actions.row(i);
    }
  }
  cache.q_eval_count += 2 * static_cast<std::uint64_t>(states.rows());
  return cache.cached_actions;
}

}  // namespace

Matrix periodic_rectify(RectifiedCache& cache, std::int64_t tau,
                        const QScorer& scorer, const Matrix& states,
                        const Matrix& actor_actions, const RectifierConfig& config,
                        Rng& rng) {
  validate(config);
  if (tau < 0) throw std::invalid_argument("tau must be non-negative");
  if (tau % config.delta == 0) {
    FullSearchResult result = full_search(scorer, states, actor_actions, config, rng);
    cache.cached_actions = std::move(result.actions);
    cache.last_full_search_step = tau;
    cache.q_eval_count += result.q_evals;
    cache.full_search_eval_count += result.q_evals;
    return cache.cached_actions;
  }
  return reuse_step(cache, scorer, states, actor_actions);
}

Matrix periodic_rectify(RectifiedCache& cache, std::int64_t tau,
                        const CriticPair& critics, const Matrix& states,
                        const ApproximatorParams& actor,
                        const RectifierConfig& config, Rng& rng) {
  return periodic_rectify(cache, tau, min_head_scorer(critics), states,
                          forward_batch(actor, states), config, rng);
}

Matrix periodic_rectify_exhaustive(RectifiedCache& cache, std::int64_t tau,
                                   const QScorer& scorer, const Matrix& states,
                                   const Matrix& actor_actions, int n_actions,
                                   int delta) {
  if (delta < 1) throw std::invalid_argument("delta must be positive");
  if (tau < 0) throw std::invalid_argument("tau must be non-negative");
  if (tau % delta == 0) {
    FullSearchResult result = exhaustive_search(scorer, states, n_actions);
    cache.cached_actions = std::move(result.actions);
    cache.last_full_search_step = tau;
    cache.q_eval_count += result.q_evals;
    cache.full_search_eval_count += result.q_evals;
    return cache.cached_actions;
  }
  return reuse_step(cache, scorer, states, actor_actions);
}

}  // namespace forler
