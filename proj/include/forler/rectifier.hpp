#pragma once

#include "forler/offline_core.hpp"

#include <cstdint>

namespace forler {

/// Isotropic Gaussian over the action box: vector mean, scalar std.
struct SearchDistribution {
  Vector mean;
  Scalar std = 0.0;
};

struct RectifierConfig {
  int population = 32;    // candidates per iteration
  int iterations = 5;     // distribution updates per full search
  Scalar beta_w = 10.0;   // softmax temperature over q-values
  int delta = 5;          // full-search period in local steps
  Scalar init_std = 0.5;
  Scalar std_floor = 1e-3;
  Scalar action_low = -1.0;
  Scalar action_high = 1.0;
};

void validate(const RectifierConfig& config);

/// Owned by one device. Rows of cached_actions align with the minibatch that
/// was current at the last full search; both counters only ever grow.
struct RectifiedCache {
  Matrix cached_actions;
  std::int64_t last_full_search_step = -1;
  std::uint64_t q_eval_count = 0;
  std::uint64_t full_search_eval_count = 0;
};

/// Numerically stable softmax of beta_w * q_values.
Vector softmax_weights(const Vector& q_values, Scalar beta_w);

/// mean = sum_n w_n a_n; std = sqrt(sum_n w_n |a_n - mean|^2).
SearchDistribution distribution_update(const Matrix& candidates,
                                       const Vector& weights);

struct FullSearchResult {
  Matrix actions;
  std::uint64_t q_evals = 0;
};

/// Per state: the actor's action seeds the search, then `iterations` rounds of
/// {sample population, score, reweight the Gaussian}. Output is the best
/// candidate seen (the actor's action wins ties, then the earliest candidate).
/// q_evals = rows * (iterations * population + 1).
FullSearchResult full_search(const QScorer& scorer, const Matrix& states,
                             const Matrix& actor_actions,
                             const RectifierConfig& config, Rng& rng);
FullSearchResult full_search(const CriticPair& critics, const Matrix& states,
                             const ApproximatorParams& actor,
                             const RectifierConfig& config, Rng& rng);

/// Discrete analogue: scores every embedded action index and takes the argmax.
/// q_evals = rows * n_actions.
FullSearchResult exhaustive_search(const QScorer& scorer, const Matrix& states,
                                   int n_actions);

/// Steps with tau divisible by delta refresh the cache through a full search;
/// other steps re-score only {cached action, actor action} per state (two
/// evaluations) and keep the winner. Throws if the cache does not align with
/// the batch on a non-refresh step.
Matrix periodic_rectify(RectifiedCache& cache, std::int64_t tau,
                        const QScorer& scorer, const Matrix& states,
                        const Matrix& actor_actions, const RectifierConfig& config,
                        Rng& rng);
Matrix periodic_rectify(RectifiedCache& cache, std::int64_t tau,
                        const CriticPair& critics, const Matrix& states,
                        const ApproximatorParams& actor,
                        const RectifierConfig& config, Rng& rng);

/// Tabular variant of the periodic rule built on exhaustive_search.
Matrix periodic_rectify_exhaustive(RectifiedCache& cache, std::int64_t tau,
                                   const QScorer& scorer, const Matrix& states,
                                   const Matrix& actor_actions, int n_actions,
                                   int delta);

}  // namespace forler
