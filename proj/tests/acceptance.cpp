// Acceptance gate: runs the eleven release criteria end-to-end and prints one
// PASS/FAIL line per criterion. Artifacts land in acceptance_out/.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "forler/config.hpp"
#include "forler/federation.hpp"
#include "forler/rectifier.hpp"
#include "forler/verify.hpp"

using namespace forler;

namespace {

const std::string kOutDir = "acceptance_out";

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

std::string g_detail;

void detail(const std::string& message) {
  if (g_detail.empty()) g_detail = message;
}

Batch random_batch(int n, int obs_dim, int act_dim, Rng& rng) {
  std::normal_distribution<double> state_dist(0.0, 1.0);
  std::uniform_real_distribution<double> action_dist(-1.0, 1.0);
  Batch b;
  b.states.resize(n, obs_dim);
  b.next_states.resize(n, obs_dim);
  b.actions.resize(n, act_dim);
  b.rewards.resize(n);
  b.terminals.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < obs_dim; ++d) {
      b.states(i, d) = state_dist(rng);
      b.next_states(i, d) = state_dist(rng);
    }
    for (int d = 0; d < act_dim; ++d) b.actions(i, d) = action_dist(rng);
    b.rewards(i) = action_dist(rng);
    b.terminals(i) = (i % 4 == 0) ? 1.0 : 0.0;
  }
  return b;
}

Matrix random_actions(int n, int act_dim, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix m(n, act_dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index d = 0; d < m.cols(); ++d) m(i, d) = dist(rng);
  }
  return m;
}

// Central finite difference against an analytic gradient; returns the worst
// error relative to max(1, |fd|).
double gradient_gap(Vector& params, const Vector& analytic,
                    const std::function<double()>& loss) {
  const double step = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = params(i);
    params(i) = saved + step;
    const double up = loss();
    params(i) = saved - step;
    const double down = loss();
    params(i) = saved;
    const double fd = (up - down) / (2.0 * step);
    const double gap = std::abs(analytic(i) - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, gap);
  }
  return worst;
}

bool criterion_gradients() {
  Timer timer;
  Rng meta = make_rng(2024, 0xacc);
  double worst = 0.0;
  for (int instance = 0; instance < 50; ++instance) {
    std::uniform_int_distribution<int> obs_dist(2, 3);
    std::uniform_int_distribution<int> act_dist(1, 2);
    std::uniform_int_distribution<int> rows_dist(4, 6);
    std::uniform_int_distribution<int> hidden_dist(4, 6);
    const int obs_dim = obs_dist(meta);
    const int act_dim = act_dist(meta);
    const int rows = rows_dist(meta);
    const std::vector<int> hidden = {hidden_dist(meta)};
    const Batch batch = random_batch(rows, obs_dim, act_dim, meta);
    CriticPair critics = make_critic_pair(obs_dim, act_dim, hidden, meta);
    ApproximatorParams actor = make_actor(obs_dim, act_dim, hidden, meta);
    const std::uint64_t eval_seed = 9000 + static_cast<std::uint64_t>(instance);

    switch (instance % 5) {
      case 0: {
        const double lambda = (instance % 2 == 0) ? 0.0 : 1.25;
        const ActorLoss loss = td3bc_actor_loss(actor, critics, batch, lambda);
        worst = std::max(worst, gradient_gap(actor.values, loss.grad, [&] {
          return td3bc_actor_loss(actor, critics, batch, lambda).loss;
        }));
        break;
      }
      case 1: {
        LocalLossConfig config;
        config.omega_c = (instance % 2 == 0) ? 5.0 : 0.0;
        config.mu_samples = 4;
        config.gamma = 0.9;
        Rng rng = make_rng(eval_seed, 1);
        const CriticLoss loss =
            cql_critic_loss(critics, actor, batch, config, rng);
        auto eval = [&] {
          Rng fresh = make_rng(eval_seed, 1);
          return cql_critic_loss(critics, actor, batch, config, fresh).loss;
        };
        worst = std::max(worst, gradient_gap(critics.q1.values, loss.grad_q1, eval));
        worst = std::max(worst, gradient_gap(critics.q2.values, loss.grad_q2, eval));
        break;
      }
      case 2: {
        LocalLossConfig config;
        config.alpha_1 = (instance % 2 == 0) ? 0.7 : 0.0;
        config.alpha_2 = (instance % 3 == 0) ? 0.0 : 0.3;
        const Matrix rectified = random_actions(rows, act_dim, meta);
        const ApproximatorParams snapshot =
            make_actor(obs_dim, act_dim, hidden, meta);
        const ActorLoss loss = rectified_actor_loss(actor, critics, batch,
                                                    rectified, snapshot, config);
        worst = std::max(worst, gradient_gap(actor.values, loss.grad, [&] {
          return rectified_actor_loss(actor, critics, batch, rectified, snapshot,
                                      config)
              .loss;
        }));
        break;
      }
      case 3: {
        ServerLossConfig config;
        config.omega_s = (instance % 2 == 0) ? 2.0 : 0.0;
        config.beta_ent = (instance % 3 == 0) ? 0.3 : 0.0;
        config.gamma = 0.9;
        std::vector<ApproximatorParams> heads = {critics.q1, critics.q2};
        const std::vector<ApproximatorParams> targets = {
            make_critic_pair(obs_dim, act_dim, hidden, meta).q1,
            make_critic_pair(obs_dim, act_dim, hidden, meta).q2};
        const Vector log_std = Vector::Constant(act_dim, std::log(0.2));
        Rng rng = make_rng(eval_seed, 2);
        const EnsembleCriticLoss loss = server_critic_loss(
            heads, targets, actor, log_std, batch, config, rng);
        for (std::size_t h = 0; h < heads.size(); ++h) {
          worst = std::max(
              worst, gradient_gap(heads[h].values, loss.grads[h], [&] {
                Rng fresh = make_rng(eval_seed, 2);
                return server_critic_loss(heads, targets, actor, log_std, batch,
                                          config, fresh)
                    .loss;
              }));
        }
        break;
      }
      case 4: {
        ServerLossConfig config;
        config.beta_ent = (instance % 2 == 0) ? 0.0 : 0.3;
        const std::vector<ApproximatorParams> heads = {
            critics.q1, critics.q2,
            make_critic_pair(obs_dim, act_dim, hidden, meta).q1};
        const Vector log_std = Vector::Constant(act_dim, std::log(0.2));
        Rng rng = make_rng(eval_seed, 3);
        const ActorLoss loss =
            server_actor_loss(actor, log_std, heads, batch, config, rng);
        worst = std::max(worst, gradient_gap(actor.values, loss.grad, [&] {
          Rng fresh = make_rng(eval_seed, 3);
          return server_actor_loss(actor, log_std, heads, batch, config, fresh)
              .loss;
        }));
        break;
      }
    }
  }
  const double elapsed = timer.seconds();
  if (worst > 1e-4) {
    detail("worst relative gradient error " + std::to_string(worst));
    return false;
  }
  if (elapsed >= 30.0) {
    detail("gradient sweep took " + std::to_string(elapsed) + " s");
    return false;
  }
  return true;
}

bool criterion_delta_one_equivalence() {
  Rng setup = make_rng(7, 0xd1);
  const int obs_dim = 4;
  const int act_dim = 2;
  const CriticPair critics = make_critic_pair(obs_dim, act_dim, {8}, setup);
  const ApproximatorParams actor = make_actor(obs_dim, act_dim, {8}, setup);
  RectifierConfig config;
  config.population = 16;
  config.iterations = 5;
  config.delta = 1;
  RectifiedCache cache;
  std::uint64_t full_search_evals = 0;
  for (int step = 0; step < 500; ++step) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix states(8, obs_dim);
    for (Eigen::Index i = 0; i < states.size(); ++i) {
      states(i % 8, i / 8) = dist(setup);
    }
    Rng rng_periodic = make_rng(100 + static_cast<std::uint64_t>(step), 1);
    Rng rng_full = make_rng(100 + static_cast<std::uint64_t>(step), 1);
    const Matrix via_cache =
        periodic_rectify(cache, step, critics, states, actor, config, rng_periodic);
    const FullSearchResult direct =
        full_search(critics, states, actor, config, rng_full);
    full_search_evals += direct.q_evals;
    if (!(via_cache == direct.actions)) {
      detail("mismatch at step " + std::to_string(step));
      return false;
    }
  }
  if (cache.q_eval_count != full_search_evals) {
    detail("per-step evaluation counters diverged");
    return false;
  }
  return true;
}

bool criterion_overhead_accounting() {
  const int iterations = 5;
  const int population = 16;
  const int batch_size = 16;
  const int obs_dim = 4;
  const int act_dim = 2;
  Rng setup = make_rng(8, 0xd2);
  const CriticPair critics = make_critic_pair(obs_dim, act_dim, {8}, setup);
  const ApproximatorParams actor = make_actor(obs_dim, act_dim, {8}, setup);

  auto run = [&](int delta) {
    RectifierConfig config;
    config.population = population;
    config.iterations = iterations;
    config.delta = delta;
    RectifiedCache cache;
    Rng rng = make_rng(9, 0xd3);
    Matrix states;
    for (int step = 0; step < 200; ++step) {
      if (step % delta == 0) {
        std::normal_distribution<double> dist(0.0, 1.0);
        states.resize(batch_size, obs_dim);
        for (Eigen::Index i = 0; i < states.size(); ++i) {
          states(i % batch_size, i / batch_size) = dist(rng);
        }
      }
      periodic_rectify(cache, step, critics, states, actor, config, rng);
    }
    return cache.full_search_eval_count;
  };

  const std::uint64_t at_five = run(5);
  const std::uint64_t at_one = run(1);
  const std::uint64_t per_refresh =
      static_cast<std::uint64_t>(batch_size) *
      (static_cast<std::uint64_t>(iterations) * population + 1);
  if (at_five != 40ull * per_refresh) {
    detail("delta=5 full-search evaluations off: " + std::to_string(at_five));
    return false;
  }
  if (at_one != 200ull * per_refresh) {
    detail("delta=1 full-search evaluations off: " + std::to_string(at_one));
    return false;
  }
  if (5ull * at_five != at_one) {
    detail("delta=5/delta=1 ratio is not exactly 0.2");
    return false;
  }
  return true;
}

bool criterion_softmax_identities() {
  Vector q(2);
  q << 0.0, std::log(3.0);
  const Vector w = softmax_weights(q, 1.0);
  if (std::abs(w(0) - 0.25) > 1e-12 || std::abs(w(1) - 0.75) > 1e-12) {
    detail("softmax hand example off");
    return false;
  }
  if (std::abs(w.sum() - 1.0) > 1e-12) {
    detail("softmax weights do not sum to one");
    return false;
  }
  const Vector shifted = softmax_weights(Vector(q.array() + 100.0), 1.0);
  if ((shifted - w).cwiseAbs().maxCoeff() > 1e-12) {
    detail("softmax is not shift invariant");
    return false;
  }

  Matrix candidates(2, 1);
  candidates << 0.0, 2.0;
  Vector even(2);
  even << 0.5, 0.5;
  const SearchDistribution spread = distribution_update(candidates, even);
  if (std::abs(spread.mean(0) - 1.0) > 1e-12 || std::abs(spread.std - 1.0) > 1e-12) {
    detail("distribution update {0,2} example off");
    return false;
  }

  Matrix single(1, 1);
  single << 0.7;
  Vector unit(1);
  unit << 1.0;
  const SearchDistribution point = distribution_update(single, unit);
  if (std::abs(point.mean(0) - 0.7) > 1e-12 || std::abs(point.std) > 1e-12) {
    detail("single-candidate distribution update off");
    return false;
  }

  Vector one_hot(2);
  one_hot << 1.0, 0.0;
  const SearchDistribution collapsed = distribution_update(candidates, one_hot);
  if (std::abs(collapsed.mean(0)) > 1e-12 || std::abs(collapsed.std) > 1e-12) {
    detail("one-hot distribution update did not collapse");
    return false;
  }
  return true;
}

bool criterion_ensemble_pessimism() {
  Rng rng = make_rng(10, 0xe5);
  const int obs_dim = 3;
  const int act_dim = 2;
  for (const int pairs : {1, 2, 4}) {
    std::vector<ApproximatorParams> heads;
    for (int h = 0; h < 2 * pairs; ++h) {
      heads.push_back(random_params(
          mlp_shape(obs_dim + act_dim, {6}, 1, Activation::relu,
                    Activation::identity),
          rng));
    }
    for (int trial = 0; trial < 5; ++trial) {
      const Batch batch = random_batch(12, obs_dim, act_dim, rng);
      const Matrix actions = random_actions(12, act_dim, rng);
      Vector aggregate = critic_values(heads[0], batch.states, actions);
      std::vector<Vector> individual = {aggregate};
      for (std::size_t h = 1; h < heads.size(); ++h) {
        individual.push_back(critic_values(heads[h], batch.states, actions));
        aggregate = aggregate.cwiseMin(individual.back());
      }
      for (const Vector& head : individual) {
        if (!(aggregate.array() <= head.array()).all()) {
          detail("aggregate exceeded a head at K=" + std::to_string(pairs));
          return false;
        }
      }
      // The actor objective's masked minimum agrees with the direct fold.
      const ApproximatorParams actor = make_actor(obs_dim, act_dim, {6}, rng);
      ServerLossConfig config;
      config.beta_ent = 0.0;
      Rng loss_rng = make_rng(11, 0xe6);
      const ActorLoss loss =
          server_actor_loss(actor, Vector::Constant(act_dim, std::log(0.2)), heads,
                            batch, config, loss_rng);
      const Matrix pi_actions = forward_batch(actor, batch.states);
      Vector fold = critic_values(heads[0], batch.states, pi_actions);
      for (std::size_t h = 1; h < heads.size(); ++h) {
        fold = fold.cwiseMin(critic_values(heads[h], batch.states, pi_actions));
      }
      if (std::abs(-loss.loss - fold.mean()) > 1e-12) {
        detail("masked minimum disagrees with the direct fold");
        return false;
      }
    }
  }
  return true;
}

bool criterion_cql_pessimism() {
  auto env = make_env("pointmass-2d", 77);
  const EnvSpec spec = env->spec();
  const OfflineDataset dataset = generate_dataset(*env, Quality::medium, 500, 77);
  std::vector<int> all_rows(dataset.transitions.size());
  for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = static_cast<int>(i);
  const Batch full = encode_batch(dataset, all_rows, spec);

  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng = make_rng(seed, 0xc91);
    CriticPair critics = make_critic_pair(spec.obs_dim, spec.act_dim, {32}, rng);
    const ApproximatorParams actor =
        make_actor(spec.obs_dim, spec.act_dim, {32}, rng);
    LocalLossConfig config;
    config.omega_c = 5.0;
    config.gamma = spec.gamma;
    config.mu_samples = 6;
    OptimizerState opt1 = make_optimizer(critics.q1.values.size(), 3e-4);
    OptimizerState opt2 = make_optimizer(critics.q2.values.size(), 3e-4);
    const int n = static_cast<int>(dataset.transitions.size());
    for (int step = 0; step < 2000; ++step) {
      const Batch batch = encode_batch(dataset, sample_indices(n, 64, rng), spec);
      const CriticLoss loss = cql_critic_loss(critics, actor, batch, config, rng);
      optimizer_step(critics.q1, opt1, loss.grad_q1);
      optimizer_step(critics.q2, opt2, loss.grad_q2);
      polyak_update(critics.q1_target, critics.q1, 0.005);
      polyak_update(critics.q2_target, critics.q2, 0.005);
    }

    for (const ApproximatorParams& head : {critics.q1, critics.q2}) {
      const double data_mean = critic_values(head, full.states, full.actions).mean();
      double random_mean = 0.0;
      for (int draw = 0; draw < 8; ++draw) {
        random_mean +=
            critic_values(head, full.states,
                          random_actions(static_cast<int>(full.states.rows()),
                                         spec.act_dim, rng))
                .mean();
      }
      random_mean /= 8.0;
      if (random_mean > data_mean) {
        detail("seed " + std::to_string(seed) + ": random-action Q " +
               std::to_string(random_mean) + " exceeds data Q " +
               std::to_string(data_mean));
        return false;
      }
    }
  }
  return true;
}

bool criterion_exact_oracles() {
  Timer timer;
  for (const std::string env_id : {std::string("chain-3"), std::string("gridworld-5x5")}) {
    auto env = make_env(env_id, 0);
    const TabularMDP& mdp = *env->mdp();
    const ValueIterationResult vi = value_iteration(mdp);
    const TabularPolicy greedy = deterministic_policy(vi.greedy, mdp.n_actions);
    const PolicyValue exact = exact_policy_value(mdp, greedy);
    if ((exact.v - vi.v).cwiseAbs().maxCoeff() > 1e-8) {
      detail(env_id + ": linear solve disagrees with value iteration");
      return false;
    }
  }

  auto env = make_env("chain-3", 0);
  const TabularMDP& mdp = *env->mdp();
  TabularPolicy uniform;
  uniform.probs = Matrix::Constant(mdp.n_states, mdp.n_actions,
                                   1.0 / static_cast<double>(mdp.n_actions));
  const Vector exact_visitation = visitation_distribution(mdp, uniform);
  Vector counts = Vector::Zero(mdp.n_states);
  Rng rng = make_rng(61, 0x31c);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int episodes = 5000;
  const int horizon = 200;
  double total_weight = 0.0;
  for (int episode = 0; episode < episodes; ++episode) {
    // Sample the initial state from mu0, then walk the chain.
    double cdf = unit(rng);
    int state = 0;
    for (int s = 0; s < mdp.n_states; ++s) {
      cdf -= mdp.initial_distribution(s);
      if (cdf <= 0.0) {
        state = s;
        break;
      }
      state = s;
    }
    double discount = 1.0;
    for (int t = 0; t < horizon; ++t) {
      counts(state) += discount;
      total_weight += discount;
      const int action = static_cast<int>(unit(rng) * mdp.n_actions) % mdp.n_actions;
      double step_cdf = unit(rng);
      int next = 0;
      for (int s = 0; s < mdp.n_states; ++s) {
        step_cdf -= mdp.transition[static_cast<std::size_t>(action)](state, s);
        if (step_cdf <= 0.0) {
          next = s;
          break;
        }
        next = s;
      }
      state = next;
      discount *= mdp.gamma;
    }
  }
  counts /= total_weight;
  if ((counts - exact_visitation).cwiseAbs().maxCoeff() > 1e-2) {
    detail("Monte Carlo visitation disagrees with the linear solve");
    return false;
  }
  if (timer.seconds() >= 10.0) {
    detail("oracle checks took " + std::to_string(timer.seconds()) + " s");
    return false;
  }
  return true;
}

ExperimentConfig pollution_config(Algorithm algorithm) {
  ExperimentConfig config = default_config("pointmass-2d");
  config.algorithm = algorithm;
  config.n_devices = 6;
  config.rounds = 30;
  config.local_steps = 300;
  config.batch_size = 64;
  config.local.mu_samples = 6;
  config.rectifier.population = 16;
  config.rectifier.iterations = 5;
  config.rectifier.delta = 5;
  config.server_grad_steps = 300;
  config.server_batch_size = 128;
  config.eval_episodes = 8;
  config.hidden = {32};
  config.learning_rate = 1e-3;
  config.device_data.clear();
  for (int k = 0; k < 4; ++k) {
    config.device_data.push_back({Quality::expert, 20000, 100 + static_cast<std::uint64_t>(k)});
  }
  for (int k = 4; k < 6; ++k) {
    config.device_data.push_back({Quality::random, 20000, 100 + static_cast<std::uint64_t>(k)});
  }
  config.server_data = {Quality::medium, 20000, 99};
  config.seeds = {1, 2, 3};
  return config;
}

bool criterion_pollution_direction() {
  Timer timer;
  const std::vector<Algorithm> arms = {Algorithm::forler, Algorithm::fed_cql,
                                       Algorithm::fed_td3bc};
  // One dataset cache serves every arm and seed.
  const FederationData data = materialize_data(pollution_config(Algorithm::forler));
  std::map<Algorithm, std::vector<double>> finals;
  std::string summary = "algorithm,seed,final_return\n";
  for (const Algorithm algorithm : arms) {
    const ExperimentConfig config = pollution_config(algorithm);
    for (const std::uint64_t seed : config.seeds) {
      const TrainingLog log = run_federation(config, seed, data);
      finals[algorithm].push_back(log.round_returns.back());
      std::ofstream csv(kOutDir + "/pollution-" + to_string(algorithm) + "-seed-" +
                        std::to_string(seed) + ".csv");
      csv << metrics_csv(log.rows);
      char line[96];
      std::snprintf(line, sizeof(line), "%s,%llu,%.17g\n",
                    to_string(algorithm).c_str(),
                    static_cast<unsigned long long>(seed),
                    log.round_returns.back());
      summary += line;
    }
  }
  std::ofstream(kOutDir + "/pollution-summary.csv") << summary;

  int wins = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (finals[Algorithm::forler][s] >= finals[Algorithm::fed_cql][s] &&
        finals[Algorithm::forler][s] >= finals[Algorithm::fed_td3bc][s]) {
      ++wins;
    }
  }
  const double elapsed = timer.seconds();
  if (elapsed >= 1200.0) {
    detail("pollution study took " + std::to_string(elapsed) + " s");
    return false;
  }
  if (wins < 2) {
    detail("forler won only " + std::to_string(wins) + "/3 seeds");
    return false;
  }
  return true;
}

ExperimentConfig rectification_config(bool enabled) {
  ExperimentConfig config = default_config("pointmass-2d");
  config.algorithm = Algorithm::forler;
  config.rectification_enabled = enabled;
  config.n_devices = 4;
  config.rounds = 20;
  config.local_steps = 300;
  config.batch_size = 64;
  config.local.mu_samples = 6;
  config.rectifier.population = 16;
  config.rectifier.iterations = 5;
  config.rectifier.delta = 5;
  config.server_grad_steps = 300;
  config.server_batch_size = 128;
  config.eval_episodes = 8;
  config.hidden = {32};
  config.learning_rate = 1e-3;
  config.device_data.clear();
  for (int k = 0; k < 4; ++k) {
    config.device_data.push_back({Quality::medium, 8000, 100 + static_cast<std::uint64_t>(k)});
  }
  config.server_data = {Quality::medium, 8000, 99};
  config.seeds = {1, 2, 3};
  return config;
}

bool criterion_rectification_direction() {
  const FederationData data = materialize_data(rectification_config(true));
  std::vector<double> on_finals;
  std::vector<double> off_finals;
  std::string summary = "arm,seed,final_return\n";
  for (const bool enabled : {true, false}) {
    const ExperimentConfig config = rectification_config(enabled);
    for (const std::uint64_t seed : config.seeds) {
      const TrainingLog log = run_federation(config, seed, data);
      (enabled ? on_finals : off_finals).push_back(log.round_returns.back());
      std::ofstream csv(kOutDir + "/rectification-" +
                        std::string(enabled ? "on" : "off") + "-seed-" +
                        std::to_string(seed) + ".csv");
      csv << metrics_csv(log.rows);
      char line[80];
      std::snprintf(line, sizeof(line), "%s,%llu,%.17g\n", enabled ? "on" : "off",
                    static_cast<unsigned long long>(seed),
                    log.round_returns.back());
      summary += line;
    }
  }
  std::ofstream(kOutDir + "/rectification-summary.csv") << summary;
  int wins = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (on_finals[s] >= off_finals[s]) ++wins;
  }
  if (wins < 2) {
    detail("rectification-on won only " + std::to_string(wins) + "/3 seeds");
    return false;
  }
  return true;
}

bool criterion_theorem1() {
  auto env = make_env("chain-3", 0);
  const TabularMDP& mdp = *env->mdp();
  const ValueIterationResult vi = value_iteration(mdp);
  const TabularPolicy pi_star = deterministic_policy(vi.greedy, mdp.n_actions);
  const TabularPolicy behavior =
      epsilon_greedy_policy(vi.greedy, mdp.n_actions, 0.25);
  const Vector embedding = action_embedding(mdp.n_actions);

  // Degenerate cells must hold outright.
  const BoundReport identical =
      check_theorem1(mdp, pi_star, pi_star, embedding, 1.0, 0.1);
  if (!identical.applicable || !identical.holds) {
    detail("identical-policy cell does not hold");
    return false;
  }
  const BoundReport degenerate =
      check_theorem1(mdp, pi_star, behavior, embedding, 0.0, 1e-9);
  if (!degenerate.applicable || !degenerate.holds) {
    detail("degenerate-coefficient cell does not hold");
    return false;
  }

  // Learned policy: a short pooled conservative run on chain-3.
  ExperimentConfig config = default_config("chain-3");
  config.algorithm = Algorithm::centralized_cql;
  config.n_devices = 2;
  config.rounds = 3;
  config.local_steps = 150;
  config.batch_size = 64;
  config.local.mu_samples = 4;
  config.eval_episodes = 2;
  config.hidden = {16};
  config.learning_rate = 1e-3;
  config.device_data = {{Quality::medium, 2000, 100}, {Quality::medium, 2000, 101}};
  config.server_data = {Quality::medium, 2000, 99};
  const FederationData data = materialize_data(config);
  const TrainingLog log = run_federation(config, 1, data);
  const TabularPolicy learned =
      tabular_policy_from_actor(log.global_actor, mdp.n_states, mdp.n_actions);

  const OfflineDataset dataset = generate_dataset(*env, Quality::medium, 2000, 99);
  const TabularMDP model = empirical_mdp(dataset, mdp.n_states, mdp.n_actions,
                                         mdp.gamma, mdp.initial_distribution);
  std::string csv =
      "alpha,eta,applicable,holds,lhs,rhs,term_d,term_quad_pi,term_quad_beta,"
      "rhs_empirical,holds_empirical\n";
  bool consistent = true;
  for (const double alpha : {0.1, 1.0}) {
    for (const double eta : {0.1, 0.5}) {
      const BoundReport cell =
          check_theorem1(mdp, learned, behavior, embedding, alpha, eta, &model);
      char line[320];
      std::snprintf(line, sizeof(line),
                    "%.17g,%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                    cell.alpha, cell.eta, cell.applicable ? 1 : 0,
                    cell.holds ? 1 : 0, cell.lhs, cell.rhs, cell.term_d,
                    cell.term_quad_pi, cell.term_quad_beta, cell.rhs_empirical,
                    cell.holds_empirical ? 1 : 0);
      csv += line;
      const double rhs_check =
          cell.term_d + cell.term_quad_pi - cell.term_quad_beta;
      if (std::abs(cell.rhs - rhs_check) > 1e-12) consistent = false;
      if (std::abs(cell.lhs - (cell.j_pi_star - cell.j_behavior)) > 1e-12) {
        consistent = false;
      }
      if (cell.applicable && cell.holds != (cell.lhs >= cell.rhs - 1e-9)) {
        consistent = false;
      }
    }
  }
  std::ofstream(kOutDir + "/theorem1-grid.csv") << csv;
  if (!consistent) {
    detail("learned-policy grid is not self-consistent");
    return false;
  }
  return std::filesystem::exists(kOutDir + "/theorem1-grid.csv");
}

bool criterion_determinism() {
  ExperimentConfig config = default_config("pointmass-2d");
  config.n_devices = 2;
  config.rounds = 2;
  config.local_steps = 8;
  config.batch_size = 8;
  config.local.mu_samples = 4;
  config.rectifier.population = 4;
  config.rectifier.iterations = 2;
  config.rectifier.delta = 4;
  config.server_grad_steps = 4;
  config.server_batch_size = 16;
  config.eval_episodes = 1;
  config.hidden = {8};
  config.device_data = {{Quality::medium, 150, 100}, {Quality::medium, 150, 101}};
  config.server_data = {Quality::medium, 150, 99};
  const FederationData data = materialize_data(config);
  const TrainingLog first = run_federation(config, 5, data);
  const TrainingLog second = run_federation(config, 5, data);
  auto scrub = [](const TrainingLog& log) {
    std::vector<MetricsRow> rows = log.rows;
    for (MetricsRow& row : rows) row.elapsed_ms = 0;
    return metrics_csv(rows);
  };
  if (scrub(first) != scrub(second)) {
    detail("rerun produced a different log");
    return false;
  }
  if (!(first.global_actor.values == second.global_actor.values)) {
    detail("rerun produced a different global actor");
    return false;
  }

  Rng rng = make_rng(99, 0xab);
  ParamEnvelope envelope;
  envelope.sender_id = 4;
  envelope.round = 9;
  envelope.kind = PayloadKind::critic_pair;
  envelope.payload = {
      random_params(mlp_shape(6, {8}, 1, Activation::relu, Activation::identity),
                    rng),
      random_params(mlp_shape(6, {8}, 1, Activation::relu, Activation::identity),
                    rng)};
  const std::vector<std::uint8_t> bytes = envelope_to_bytes(envelope);
  const ParamEnvelope decoded = envelope_from_bytes(bytes);
  if (!(envelope_to_bytes(decoded) == bytes) ||
      !(decoded.payload[0].values == envelope.payload[0].values) ||
      !(decoded.payload[1].values == envelope.payload[1].values)) {
    detail("envelope round-trip is not bitwise");
    return false;
  }
  return true;
}

}  // namespace

int main() {
  std::filesystem::create_directories(kOutDir);
  struct Criterion {
    int id;
    const char* name;
    bool (*run)();
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness vs finite differences", criterion_gradients},
      {2, "delta=1 rectification is bitwise full search", criterion_delta_one_equivalence},
      {3, "full-search overhead accounting", criterion_overhead_accounting},
      {4, "softmax and distribution-update identities", criterion_softmax_identities},
      {5, "ensemble minimum is pessimistic", criterion_ensemble_pessimism},
      {6, "conservative critic scores data above random", criterion_cql_pessimism},
      {7, "exact tabular oracles agree", criterion_exact_oracles},
      {8, "pollution mitigation direction", criterion_pollution_direction},
      {9, "rectification ablation direction", criterion_rectification_direction},
      {10, "policy-improvement bound checker", criterion_theorem1},
      {11, "determinism and transport", criterion_determinism},
  };
  int failures = 0;
  for (const Criterion& criterion : criteria) {
    g_detail.clear();
    Timer timer;
    bool ok = false;
    try {
      ok = criterion.run();
    } catch (const std::exception& e) {
      detail(e.what());
    }
    std::printf("%s  %2d  %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", criterion.id,
                criterion.name, timer.seconds(), g_detail.empty() ? "" : " -- ",
                g_detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
