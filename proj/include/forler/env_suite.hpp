#pragma once

#include "forler/approximator.hpp"
#include "forler/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace forler {

struct Transition {
  Vector state;       // raw state (tabular: size-1 state index)
  Vector action;      // raw action (tabular: size-1 action index)
  Scalar reward;
  Vector next_state;
  bool terminal;
};

enum class Quality : std::uint8_t {
  expert = 0,
  medium = 1,
  medium_replay = 2,
  random = 3,
  mixed = 4,  // 1:1 expert + medium
};

std::string to_string(Quality q);
Quality quality_from_string(const std::string& s);

/// Immutable after generation; all transitions come from env_id.
struct OfflineDataset {
  std::vector<Transition> transitions;
  Quality quality = Quality::medium;
  Scalar behavior_epsilon = 0.0;
  std::string env_id;
  std::uint64_t seed = 0;
};

struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Matrix> transition;  // transition[a](s, s')
  Matrix reward;                   // reward(s, a)
  Scalar gamma = 0.9;
  Vector initial_distribution;
};

/// Row-stochasticity within 1e-12, valid dims, gamma in [0, 1).
void validate(const TabularMDP& mdp);

struct EnvSpec {
  std::string id;
  bool tabular = false;
  int n_states = 0;
  int n_actions = 0;
  int state_dim = 0;   // raw dataset width (tabular: 1)
  int action_dim = 0;  // raw dataset width (tabular: 1)
  int obs_dim = 0;     // network input width (tabular: n_states, one-hot)
  int act_dim = 0;     // network action width (tabular: 1, embedded index)
  Scalar gamma = 0.99;
  Scalar eval_gamma = 1.0;
  int episode_length = 100;
  Scalar action_low = -1.0;
  Scalar action_high = 1.0;
};

struct StepResult {
  Vector next_state;  // raw
  Scalar reward;
  bool terminal;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual void reseed(std::uint64_t seed) = 0;
  /// Returns the raw initial state.
  virtual Vector reset() = 0;
  /// Takes a raw action (tabular: size-1 vector holding the action index).
  virtual StepResult step(const Vector& action) = 0;
  virtual const TabularMDP* mdp() const { return nullptr; }
};

/// env_id in {gridworld-5x5, pointmass-2d, chain-3}; throws listing valid ids.
std::unique_ptr<Env> make_env(const std::string& env_id, std::uint64_t seed);

TabularMDP make_chain3();
TabularMDP make_gridworld5();

/// Per-action scalar embedding: index mapped affinely onto [-1, 1].
Vector action_embedding(int n_actions);
int snap_to_action_index(Scalar embedded, int n_actions);
Vector one_hot(int index, int n);

struct ValueIterationResult {
  Vector v;
  std::vector<int> greedy;
  int iterations = 0;
};

ValueIterationResult value_iteration(const TabularMDP& mdp, Scalar tol = 1e-12,
                                     int max_iterations = 200000);

/// Raw state in, raw action out.
using BehaviorPolicy = std::function<Vector(const Vector& state, Rng& rng)>;

/// Built-in tier policy for the environment: epsilon-greedy over the
/// value-iteration optimum (tabular) or a PD controller (point-mass).
BehaviorPolicy tier_policy(const Env& env, Scalar epsilon);
Scalar tier_epsilon(Quality q);

OfflineDataset generate_dataset(Env& env, const BehaviorPolicy& behavior,
                                int n_transitions, Quality quality,
                                Scalar behavior_epsilon, std::uint64_t seed);
OfflineDataset generate_dataset(Env& env, Quality quality, int n_transitions,
                                std::uint64_t seed);

struct EvalResult {
  Scalar mean = 0.0;
  Scalar stddev = 0.0;
};

/// Encoded observation in, raw action out.
using RolloutPolicy = std::function<Vector(const Vector& obs, Rng& rng)>;

EvalResult evaluate_policy(Env& env, const RolloutPolicy& policy,
                           int n_episodes, std::uint64_t seed);
/// Deterministic actor: tabular envs snap the embedded output to an index.
EvalResult evaluate_policy(Env& env, const ApproximatorParams& actor,
                           int n_episodes, std::uint64_t seed);

Vector encode_state(const EnvSpec& spec, const Vector& raw_state);
Vector encode_action(const EnvSpec& spec, const Vector& raw_action);

/// Row batch in network coordinates.
struct Batch {
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector terminals;  // 1.0 where terminal
};

Batch encode_batch(const OfflineDataset& dataset, const std::vector<int>& rows,
                   const EnvSpec& spec);
std::vector<int> sample_indices(int dataset_size, int batch_size, Rng& rng);

/// Mean and count of per-episode discounted returns contained in the dataset
/// (episodes delimited by terminal flags or the env's episode length).
struct DatasetReturns {
  Scalar mean = 0.0;
  int episodes = 0;
};
DatasetReturns dataset_episode_returns(const OfflineDataset& dataset,
                                       const EnvSpec& spec);

// "FORD" binary container plus a CSV export for inspection.
std::vector<std::uint8_t> dataset_to_bytes(const OfflineDataset& dataset);
OfflineDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_dataset(const OfflineDataset& dataset, const std::string& path);
OfflineDataset load_dataset(const std::string& path);
void export_dataset_csv(const OfflineDataset& dataset, const std::string& path);

}  // namespace forler
