#include "forler/env_suite.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace forler {

static_assert(std::endian::native == std::endian::little,
              "dataset serialization assumes a little-endian host");

std::string to_string(Quality q) {
  switch (q) {
    case Quality::expert: return "expert";
    case Quality::medium: return "medium";
    case Quality::medium_replay: return "medium_replay";
    case Quality::random: return "random";
    case Quality::mixed: return "mixed";
  }
  throw std::logic_error("unknown quality enum value");
}

Quality quality_from_string(const std::string& s) {
  if (s == "expert") return Quality::expert;
  if (s == "medium") return Quality::medium;
  if (s == "medium_replay") return Quality::medium_replay;
  if (s == "random") return Quality::random;
  if (s == "mixed") return Quality::mixed;
  throw std::invalid_argument("unknown dataset quality '" + s +
                              "' (expected expert|medium|medium_replay|random|mixed)");
}

void validate(const TabularMDP& mdp) {
  if (mdp.n_states <= 0 || mdp.n_actions <= 0) {
    throw std::invalid_argument("tabular mdp needs positive state and action counts");
  }
  if (mdp.gamma < 0.0 || mdp.gamma >= 1.0) {
    throw std::invalid_argument("tabular mdp gamma must lie in [0, 1)");
  }
  if (static_cast<int>(mdp.transition.size()) != mdp.n_actions) {
    throw std::invalid_argument("tabular mdp has wrong number of transition matrices");
  }
  for (int a = 0; a < mdp.n_actions; ++a) {
    const Matrix& p = mdp.transition[a];
    if (p.rows() != mdp.n_states || p.cols() != mdp.n_states) {
      throw std::invalid_argument("transition matrix has wrong shape");
    }
    for (int s = 0; s < mdp.n_states; ++s) {
      if (p.row(s).minCoeff() < 0.0) {
        throw std::invalid_argument("transition probabilities must be nonnegative");
      }
      if (std::abs(p.row(s).sum() - 1.0) > 1e-12) {
        throw std::invalid_argument("transition rows must sum to one");
      }
    }
  }
  if (mdp.reward.rows() != mdp.n_states || mdp.reward.cols() != mdp.n_actions) {
    throw std::invalid_argument("reward matrix has wrong shape");
  }
  if (mdp.initial_distribution.size() != mdp.n_states ||
      mdp.initial_distribution.minCoeff() < 0.0 ||
      std::abs(mdp.initial_distribution.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("initial distribution must be a probability vector");
  }
}

Vector action_embedding(int n_actions) {
  if (n_actions <= 0) throw std::invalid_argument("need at least one action");
  Vector embed(n_actions);
  if (n_actions == 1) {
    embed(0) = 0.0;
    return embed;
  }
  for (int a = 0; a < n_actions; ++a) {
    embed(a) = -1.0 + 2.0 * static_cast<Scalar>(a) / static_cast<Scalar>(n_actions - 1);
  }
  return embed;
}

int snap_to_action_index(Scalar embedded, int n_actions) {
  if (n_actions <= 0) throw std::invalid_argument("need at least one action");
  if (n_actions == 1) return 0;
  const Scalar raw = (embedded + 1.0) * 0.5 * static_cast<Scalar>(n_actions - 1);
  const int idx = static_cast<int>(std::lround(raw));
  return std::clamp(idx, 0, n_actions - 1);
}

Vector one_hot(int index, int n) {
  if (index < 0 || index >= n) {
    throw std::out_of_range("one_hot index out of range");
  }
  Vector v = Vector::Zero(n);
  v(index) = 1.0;
  return v;
}

ValueIterationResult value_iteration(const TabularMDP& mdp, Scalar tol,
                                     int max_iterations) {
  validate(mdp);
  Vector v = Vector::Zero(mdp.n_states);
  Matrix q(mdp.n_states, mdp.n_actions);
  for (int it = 1; it <= max_iterations; ++it) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      q.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
    }
    Vector next = q.rowwise().maxCoeff();
    const Scalar diff = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (diff <= tol) {
      ValueIterationResult out;
      out.v = v;
      out.iterations = it;
      out.greedy.resize(static_cast<std::size_t>(mdp.n_states));
      for (int s = 0; s < mdp.n_states; ++s) {
        int best = 0;
        for (int a = 1; a < mdp.n_actions; ++a) {
          if (q(s, a) > q(s, best)) best = a;
        }
        out.greedy[static_cast<std::size_t>(s)] = best;
      }
      return out;
    }
  }
  throw std::runtime_error("value iteration failed to converge");
}

namespace {

class TabularEnv final : public Env {
 public:
  TabularEnv(EnvSpec spec, TabularMDP mdp, int terminal_state, std::uint64_t seed)
      : spec_(std::move(spec)),
        mdp_(std::move(mdp)),
        terminal_state_(terminal_state),
        rng_(make_rng(seed, 0x7ab)) {
    validate(mdp_);
  }

  const EnvSpec& spec() const override { return spec_; }

  void reseed(std::uint64_t seed) override { rng_ = make_rng(seed, 0x7ab); }

  Vector reset() override {
    std::discrete_distribution<int> start(
        mdp_.initial_distribution.data(),
        mdp_.initial_distribution.data() + mdp_.initial_distribution.size());
    state_ = start(rng_);
    Vector s(1);
    s(0) = static_cast<Scalar>(state_);
    return s;
  }

  StepResult step(const Vector& action) override {
    if (action.size() != 1) {
      throw std::invalid_argument("tabular action must be a single index");
    }
    const int a = static_cast<int>(std::lround(action(0)));
    if (a < 0 || a >= mdp_.n_actions) {
      throw std::out_of_range("tabular action index out of range");
    }
    const Matrix& p = mdp_.transition[a];
    const Scalar u = std::uniform_real_distribution<Scalar>(0.0, 1.0)(rng_);
    int next = mdp_.n_states - 1;
    Scalar acc = 0.0;
    for (int sp = 0; sp < mdp_.n_states; ++sp) {
      acc += p(state_, sp);
      if (u <= acc) {
        next = sp;
        break;
      }
    }
    StepResult out;
    out.reward = mdp_.reward(state_, a);
    out.terminal = (terminal_state_ >= 0 && next == terminal_state_);
    state_ = next;
    out.next_state = Vector(1);
    out.next_state(0) = static_cast<Scalar>(state_);
    return out;
  }

  const TabularMDP* mdp() const override { return &mdp_; }

 private:
  EnvSpec spec_;
  TabularMDP mdp_;
  int terminal_state_;
  Rng rng_;
  int state_ = 0;
};

class PointMassEnv final : public Env {
 public:
  explicit PointMassEnv(EnvSpec spec, std::uint64_t seed)
      : spec_(std::move(spec)), rng_(make_rng(seed, 0x7ab)) {}

  const EnvSpec& spec() const override { return spec_; }

  void reseed(std::uint64_t seed) override { rng_ = make_rng(seed, 0x7ab); }

  Vector reset() override {
    state_ = Vector::Zero(4);
    state_(0) = -0.5;
    state_(1) = -0.5;
    return state_;
  }

  StepResult step(const Vector& action) override {
    if (action.size() != 2) {
      throw std::invalid_argument("point mass action must have two components");
    }
    const Scalar ax = std::clamp(action(0), -1.0, 1.0);
    const Scalar ay = std::clamp(action(1), -1.0, 1.0);
    const Scalar vx = std::clamp(state_(2) + kDt * ax, -kVMax, kVMax);
    const Scalar vy = std::clamp(state_(3) + kDt * ay, -kVMax, kVMax);
    state_(0) += kDt * vx;
    state_(1) += kDt * vy;
    state_(2) = vx;
    state_(3) = vy;
    StepResult out;
    const Scalar dx = state_(0) - kGoalX;
    const Scalar dy = state_(1) - kGoalY;
    out.reward = -std::sqrt(dx * dx + dy * dy);
    out.terminal = false;
    out.next_state = state_;
    return out;
  }

  const TabularMDP* mdp() const override { return nullptr; }

  static constexpr Scalar kDt = 0.05;
  static constexpr Scalar kVMax = 2.0;
  static constexpr Scalar kGoalX = 0.5;
  static constexpr Scalar kGoalY = 0.5;

 private:
  EnvSpec spec_;
  Rng rng_;
  Vector state_;
};

}  // namespace

TabularMDP make_chain3() {
  TabularMDP mdp;
  mdp.n_states = 3;
  mdp.n_actions = 2;
  mdp.gamma = 0.9;
  mdp.transition.assign(2, Matrix::Zero(3, 3));
  // Action 0 holds position, action 1 advances with some chance of slipping back.
  for (int s = 0; s < 3; ++s) {
    mdp.transition[0](s, s) = 1.0;
    const int fwd = std::min(s + 1, 2);
    mdp.transition[1](s, fwd) += 0.9;
    mdp.transition[1](s, 0) += 0.1;
  }
  mdp.reward = Matrix::Zero(3, 2);
  mdp.reward.col(0).setConstant(0.1);
  mdp.reward(2, 1) = 1.0;
  mdp.initial_distribution = Vector::Zero(3);
  mdp.initial_distribution(0) = 1.0;
  validate(mdp);
  return mdp;
}

TabularMDP make_gridworld5() {
  const int side = 5;
  const int n = side * side;
  const int goal = n - 1;
  TabularMDP mdp;
  mdp.n_states = n;
  mdp.n_actions = 4;
  mdp.gamma = 0.95;
  mdp.transition.assign(4, Matrix::Zero(n, n));
  const int drow[4] = {-1, 0, 1, 0};
  const int dcol[4] = {0, 1, 0, -1};
  auto move = [&](int s, int a) {
    const int row = s / side;
    const int col = s % side;
    const int nr = row + drow[a];
    const int nc = col + dcol[a];
    if (nr < 0 || nr >= side || nc < 0 || nc >= side) return s;
    return nr * side + nc;
  };
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {
        mdp.transition[a](s, s) = 1.0;
        continue;
      }
      mdp.transition[a](s, move(s, a)) += 0.9;
      for (int slip = 0; slip < 4; ++slip) {
        mdp.transition[a](s, move(s, slip)) += 0.025;
      }
    }
  }
  mdp.reward = Matrix::Zero(n, 4);
  for (int s = 0; s < n; ++s) {
    if (s == goal) continue;
    for (int a = 0; a < 4; ++a) {
      mdp.reward(s, a) = mdp.transition[a](s, goal) - 0.01;
    }
  }
  mdp.initial_distribution = Vector::Zero(n);
  mdp.initial_distribution(0) = 1.0;
  validate(mdp);
  return mdp;
}

std::unique_ptr<Env> make_env(const std::string& env_id, std::uint64_t seed) {
  if (env_id == "chain-3") {
    EnvSpec spec;
    spec.id = env_id;
    spec.tabular = true;
    spec.n_states = 3;
    spec.n_actions = 2;
    spec.state_dim = 1;
    spec.action_dim = 1;
    spec.obs_dim = 3;
    spec.act_dim = 1;
    spec.gamma = 0.9;
    spec.eval_gamma = 0.9;
    spec.episode_length = 100;
    return std::make_unique<TabularEnv>(std::move(spec), make_chain3(), -1, seed);
  }
  if (env_id == "gridworld-5x5") {
    EnvSpec spec;
    spec.id = env_id;
    spec.tabular = true;
    spec.n_states = 25;
    spec.n_actions = 4;
    spec.state_dim = 1;
    spec.action_dim = 1;
    spec.obs_dim = 25;
    spec.act_dim = 1;
    spec.gamma = 0.95;
    spec.eval_gamma = 0.95;
    spec.episode_length = 100;
    return std::make_unique<TabularEnv>(std::move(spec), make_gridworld5(), 24, seed);
  }
  if (env_id == "pointmass-2d") {
    EnvSpec spec;
    spec.id = env_id;
    spec.tabular = false;
    spec.state_dim = 4;
    spec.action_dim = 2;
    spec.obs_dim = 4;
    spec.act_dim = 2;
    spec.gamma = 0.98;
    spec.eval_gamma = 1.0;
    spec.episode_length = 100;
    return std::make_unique<PointMassEnv>(std::move(spec), seed);
  }
  throw std::invalid_argument("unknown environment '" + env_id +
                              "' (expected chain-3|gridworld-5x5|pointmass-2d)");
}

Scalar tier_epsilon(Quality q) {
  switch (q) {
    case Quality::expert: return 0.05;
    case Quality::medium: return 0.35;
    case Quality::random: return 1.0;
    case Quality::medium_replay: return (0.05 + 0.35 + 1.0) / 3.0;
    case Quality::mixed: return (0.05 + 0.35) / 2.0;
  }
  throw std::logic_error("unknown quality enum value");
}

BehaviorPolicy tier_policy(const Env& env, Scalar epsilon) {
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("behavior epsilon must lie in [0, 1]");
  }
  const EnvSpec& spec = env.spec();
  if (spec.tabular) {
    const TabularMDP* mdp = env.mdp();
    ValueIterationResult vi = value_iteration(*mdp);
    std::vector<int> greedy = vi.greedy;
    const int n_actions = mdp->n_actions;
    return [greedy, n_actions, epsilon](const Vector& state, Rng& rng) {
      const int s = static_cast<int>(std::lround(state(0)));
      int a = greedy.at(static_cast<std::size_t>(s));
      if (std::uniform_real_distribution<Scalar>(0.0, 1.0)(rng) < epsilon) {
        a = std::uniform_int_distribution<int>(0, n_actions - 1)(rng);
      }
      Vector out(1);
      out(0) = static_cast<Scalar>(a);
      return out;
    };
  }
  // Proportional-derivative steering toward the goal, saturated to the action box.
  const Scalar kp = 6.0;
  const Scalar kd = 3.0;
  return [kp, kd, epsilon](const Vector& state, Rng& rng) {
    Vector a(2);
    if (std::uniform_real_distribution<Scalar>(0.0, 1.0)(rng) < epsilon) {
      a(0) = std::uniform_real_distribution<Scalar>(-1.0, 1.0)(rng);
      a(1) = std::uniform_real_distribution<Scalar>(-1.0, 1.0)(rng);
      return a;
    }
    a(0) = std::clamp(kp * (PointMassEnv::kGoalX - state(0)) - kd * state(2), -1.0, 1.0);
    a(1) = std::clamp(kp * (PointMassEnv::kGoalY - state(1)) - kd * state(3), -1.0, 1.0);
    return a;
  };
}

OfflineDataset generate_dataset(Env& env, const BehaviorPolicy& behavior,
                                int n_transitions, Quality quality,
                                Scalar behavior_epsilon, std::uint64_t seed) {
  if (n_transitions <= 0) {
    throw std::invalid_argument("dataset size must be positive");
  }
  env.reseed(derive_seed(seed, 0xde1, 0));
  Rng policy_rng = make_rng(seed, 0xbe1);
  OfflineDataset data;
  data.transitions.reserve(static_cast<std::size_t>(n_transitions));
  data.quality = quality;
  data.behavior_epsilon = behavior_epsilon;
  data.env_id = env.spec().id;
  data.seed = seed;
  const int horizon = env.spec().episode_length;
  while (static_cast<int>(data.transitions.size()) < n_transitions) {
    Vector state = env.reset();
    for (int t = 0; t < horizon; ++t) {
      Transition tr;
      tr.state = state;
      tr.action = behavior(state, policy_rng);
      StepResult step = env.step(tr.action);
      tr.reward = step.reward;
      tr.next_state = step.next_state;
      tr.terminal = step.terminal;
      state = step.next_state;
      data.transitions.push_back(std::move(tr));
      if (step.terminal || static_cast<int>(data.transitions.size()) == n_transitions) {
        break;
      }
    }
  }
  return data;
}

OfflineDataset generate_dataset(Env& env, Quality quality, int n_transitions,
                                std::uint64_t seed) {
  if (quality == Quality::expert || quality == Quality::medium ||
      quality == Quality::random) {
    const Scalar eps = tier_epsilon(quality);
    return generate_dataset(env, tier_policy(env, eps), n_transitions, quality, eps,
                            seed);
  }
  std::vector<Quality> parts;
  if (quality == Quality::mixed) {
    parts = {Quality::expert, Quality::medium};
  } else {
    parts = {Quality::expert, Quality::medium, Quality::random};
  }
  const int k = static_cast<int>(parts.size());
  OfflineDataset data;
  data.transitions.reserve(static_cast<std::size_t>(n_transitions));
  data.quality = quality;
  data.behavior_epsilon = tier_epsilon(quality);
  data.env_id = env.spec().id;
  data.seed = seed;
  int remaining = n_transitions;
  for (int i = 0; i < k; ++i) {
    const int share = (i + 1 < k) ? n_transitions / k : remaining;
    remaining -= share;
    if (share <= 0) continue;
    OfflineDataset part = generate_dataset(
        env, parts[i], share, derive_seed(seed, 0x317, static_cast<std::uint64_t>(i)));
    for (auto& tr : part.transitions) {
      data.transitions.push_back(std::move(tr));
    }
  }
  return data;
}

EvalResult evaluate_policy(Env& env, const RolloutPolicy& policy, int n_episodes,
                           std::uint64_t seed) {
  if (n_episodes <= 0) {
    throw std::invalid_argument("need at least one evaluation episode");
  }
  env.reseed(derive_seed(seed, 0xe7a, 0));
  Rng policy_rng = make_rng(seed, 0xe7b);
  const EnvSpec& spec = env.spec();
  Vector returns(n_episodes);
  for (int ep = 0; ep < n_episodes; ++ep) {
    Vector state = env.reset();
    Scalar ret = 0.0;
    Scalar discount = 1.0;
    for (int t = 0; t < spec.episode_length; ++t) {
      Vector action = policy(encode_state(spec, state), policy_rng);
      StepResult step = env.step(action);
      ret += discount * step.reward;
      discount *= spec.eval_gamma;
      state = step.next_state;
      if (step.terminal) break;
    }
    returns(ep) = ret;
  }
  EvalResult out;
  out.mean = returns.mean();
  out.stddev = std::sqrt((returns.array() - out.mean).square().mean());
  return out;
}

EvalResult evaluate_policy(Env& env, const ApproximatorParams& actor, int n_episodes,
                           std::uint64_t seed) {
  const EnvSpec spec = env.spec();
  RolloutPolicy policy;
  if (spec.tabular) {
    policy = [&spec, &actor](const Vector& obs, Rng&) {
      Vector embedded = forward(actor, obs);
      Vector out(1);
      out(0) = static_cast<Scalar>(snap_to_action_index(embedded(0), spec.n_actions));
      return out;
    };
  } else {
    policy = [&spec, &actor](const Vector& obs, Rng&) {
      Vector a = forward(actor, obs);
      return a.cwiseMax(spec.action_low).cwiseMin(spec.action_high).eval();
    };
  }
  return evaluate_policy(env, policy, n_episodes, seed);
}

Vector encode_state(const EnvSpec& spec, const Vector& raw_state) {
  if (!spec.tabular) return raw_state;
  if (raw_state.size() != 1) {
    throw std::invalid_argument("tabular raw state must be a single index");
  }
  return one_hot(static_cast<int>(std::lround(raw_state(0))), spec.obs_dim);
}

Vector encode_action(const EnvSpec& spec, const Vector& raw_action) {
  if (!spec.tabular) return raw_action;
  if (raw_action.size() != 1) {
    throw std::invalid_argument("tabular raw action must be a single index");
  }
  const int a = static_cast<int>(std::lround(raw_action(0)));
  if (a < 0 || a >= spec.n_actions) {
    throw std::out_of_range("tabular action index out of range");
  }
  Vector out(1);
  out(0) = action_embedding(spec.n_actions)(a);
  return out;
}

Batch encode_batch(const OfflineDataset& dataset, const std::vector<int>& rows,
                   const EnvSpec& spec) {
  const int n = static_cast<int>(rows.size());
  Batch batch;
  batch.states.resize(n, spec.obs_dim);
  batch.actions.resize(n, spec.act_dim);
  batch.rewards.resize(n);
  batch.next_states.resize(n, spec.obs_dim);
  batch.terminals.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& tr = dataset.transitions.at(static_cast<std::size_t>(rows[i]));
    batch.states.row(i) = encode_state(spec, tr.state).transpose();
    batch.actions.row(i) = encode_action(spec, tr.action).transpose();
    batch.rewards(i) = tr.reward;
    batch.next_states.row(i) = encode_state(spec, tr.next_state).transpose();
    batch.terminals(i) = tr.terminal ? 1.0 : 0.0;
  }
  return batch;
}

std::vector<int> sample_indices(int dataset_size, int batch_size, Rng& rng) {
  if (dataset_size <= 0 || batch_size <= 0) {
    throw std::invalid_argument("sample_indices needs positive sizes");
  }
  std::vector<int> out(static_cast<std::size_t>(batch_size));
  std::uniform_int_distribution<int> pick(0, dataset_size - 1);
  for (auto& idx : out) idx = pick(rng);
  return out;
}

DatasetReturns dataset_episode_returns(const OfflineDataset& dataset,
                                       const EnvSpec& spec) {
  Scalar total = 0.0;
  int episodes = 0;
  Scalar ret = 0.0;
  Scalar discount = 1.0;
  int steps = 0;
  for (const auto& tr : dataset.transitions) {
    ret += discount * tr.reward;
    discount *= spec.eval_gamma;
    ++steps;
    if (tr.terminal || steps == spec.episode_length) {
      total += ret;
      ++episodes;
      ret = 0.0;
      discount = 1.0;
      steps = 0;
    }
  }
  // A trailing partial episode is dropped so truncation does not bias the mean.
  if (episodes == 0) {
    throw std::runtime_error("dataset holds no complete episode");
  }
  DatasetReturns out;
  out.mean = total / static_cast<Scalar>(episodes);
  out.episodes = episodes;
  return out;
}

namespace {

void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}

void put_f64(std::vector<std::uint8_t>& buf, double v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint8_t u8() { return take<std::uint8_t>(); }
  std::uint16_t u16() { return take<std::uint16_t>(); }
  std::uint64_t u64() { return take<std::uint64_t>(); }
  double f64() { return take<double>(); }

  std::string str(std::size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(buf_.data()) + pos_, n);
    pos_ += n;
    return out;
  }

  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw std::runtime_error("dataset file truncated");
    }
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

constexpr std::uint16_t kFordVersion = 1;

}  // namespace

std::vector<std::uint8_t> dataset_to_bytes(const OfflineDataset& dataset) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("refusing to serialize an empty dataset");
  }
  const auto& first = dataset.transitions.front();
  const auto state_dim = first.state.size();
  const auto action_dim = first.action.size();
  std::vector<std::uint8_t> buf;
  buf.reserve(64 + dataset.transitions.size() * 8 *
                       static_cast<std::size_t>(2 * state_dim + action_dim + 2));
  const char magic[4] = {'F', 'O', 'R', 'D'};
  buf.insert(buf.end(), magic, magic + 4);
  put_u16(buf, kFordVersion);
  put_u16(buf, static_cast<std::uint16_t>(dataset.env_id.size()));
  buf.insert(buf.end(), dataset.env_id.begin(), dataset.env_id.end());
  buf.push_back(static_cast<std::uint8_t>(dataset.quality));
  put_f64(buf, dataset.behavior_epsilon);
  put_u64(buf, dataset.seed);
  put_u64(buf, dataset.transitions.size());
  put_u16(buf, static_cast<std::uint16_t>(state_dim));
  put_u16(buf, static_cast<std::uint16_t>(action_dim));
  for (const auto& tr : dataset.transitions) {
    if (tr.state.size() != state_dim || tr.next_state.size() != state_dim ||
        tr.action.size() != action_dim) {
      throw std::invalid_argument("dataset rows have inconsistent dimensions");
    }
    for (Eigen::Index i = 0; i < state_dim; ++i) put_f64(buf, tr.state(i));
    for (Eigen::Index i = 0; i < action_dim; ++i) put_f64(buf, tr.action(i));
    put_f64(buf, tr.reward);
    for (Eigen::Index i = 0; i < state_dim; ++i) put_f64(buf, tr.next_state(i));
    put_f64(buf, tr.terminal ? 1.0 : 0.0);
  }
  return buf;
}

OfflineDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
  ByteReader rd(bytes);
  if (rd.str(4) != "FORD") {
    throw std::runtime_error("bad dataset magic (expected FORD)");
  }
  const std::uint16_t version = rd.u16();
  if (version != kFordVersion) {
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  }
  OfflineDataset data;
  data.env_id = rd.str(rd.u16());
  const std::uint8_t quality = rd.u8();
  if (quality > static_cast<std::uint8_t>(Quality::mixed)) {
    throw std::runtime_error("bad quality tag in dataset file");
  }
  data.quality = static_cast<Quality>(quality);
  data.behavior_epsilon = rd.f64();
  data.seed = rd.u64();
  const std::uint64_t n = rd.u64();
  const int state_dim = rd.u16();
  const int action_dim = rd.u16();
  if (n == 0 || state_dim == 0) {
    throw std::runtime_error("dataset file declares empty contents");
  }
  data.transitions.resize(n);
  for (auto& tr : data.transitions) {
    tr.state.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) tr.state(i) = rd.f64();
    tr.action.resize(action_dim);
    for (int i = 0; i < action_dim; ++i) tr.action(i) = rd.f64();
    tr.reward = rd.f64();
    tr.next_state.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) tr.next_state(i) = rd.f64();
    tr.terminal = rd.f64() != 0.0;
  }
  if (!rd.exhausted()) {
    throw std::runtime_error("dataset file has trailing bytes");
  }
  return data;
}

void save_dataset(const OfflineDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::vector<std::uint8_t> bytes = dataset_to_bytes(dataset);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return dataset_from_bytes(bytes);
}

void export_dataset_csv(const OfflineDataset& dataset, const std::string& path) {
  if (dataset.transitions.empty()) {
    throw std::invalid_argument("refusing to export an empty dataset");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const auto state_dim = dataset.transitions.front().state.size();
  const auto action_dim = dataset.transitions.front().action.size();
  for (Eigen::Index i = 0; i < state_dim; ++i) out << "s" << i << ",";
  for (Eigen::Index i = 0; i < action_dim; ++i) out << "a" << i << ",";
  out << "reward,";
  for (Eigen::Index i = 0; i < state_dim; ++i) out << "ns" << i << ",";
  out << "terminal\n";
  char num[64];
  auto put = [&](double v) {
    std::snprintf(num, sizeof num, "%.17g", v);
    out << num;
  };
  for (const auto& tr : dataset.transitions) {
    for (Eigen::Index i = 0; i < state_dim; ++i) {
      put(tr.state(i));
      out << ",";
    }
    for (Eigen::Index i = 0; i < action_dim; ++i) {
      put(tr.action(i));
      out << ",";
    }
    put(tr.reward);
    out << ",";
    for (Eigen::Index i = 0; i < state_dim; ++i) {
      put(tr.next_state(i));
      out << ",";
    }
    out << (tr.terminal ? 1 : 0) << "\n";
  }
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

}  // namespace forler
