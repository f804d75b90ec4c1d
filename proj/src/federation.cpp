#include "forler/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace forler {

namespace {

static_assert(sizeof(double) == 8, "envelope codec assumes 8-byte doubles");

void append_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

template <typename T>
void append_scalar(std::vector<std::uint8_t>& out, T value) {
  append_bytes(out, &value, sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw std::invalid_argument("envelope data is truncated");
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

constexpr char kEnvelopeMagic[4] = {'F', 'E', 'N', 'V'};
constexpr std::uint16_t kEnvelopeVersion = 1;

}  // namespace

std::vector<std::uint8_t> envelope_to_bytes(const ParamEnvelope& envelope) {
  for (const ApproximatorParams& block : envelope.payload) {
    validate_shape(block.shape);
    if (block.values.size() != param_count(block.shape)) {
      throw std::invalid_argument("envelope block values disagree with its shape");
    }
  }
  std::vector<std::uint8_t> out;
  append_bytes(out, kEnvelopeMagic, 4);
  append_scalar<std::uint16_t>(out, kEnvelopeVersion);
  append_scalar<std::int32_t>(out, envelope.sender_id);
  append_scalar<std::int32_t>(out, envelope.round);
  append_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(envelope.kind));
  append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(envelope.payload.size()));
  for (const ApproximatorParams& block : envelope.payload) {
    append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(block.shape.size()));
    for (const LayerSpec& layer : block.shape) {
      append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(layer.input_dim));
      append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(layer.output_dim));
      append_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(layer.activation));
    }
    append_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(block.values.size()));
    append_bytes(out, block.values.data(),
                 static_cast<std::size_t>(block.values.size()) * sizeof(double));
  }
  append_scalar<std::uint32_t>(out, crc32(out.data(), out.size()));
  return out;
}

ParamEnvelope envelope_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 2 + 4 + 4 + 1 + 4 + 4) {
    throw std::invalid_argument("envelope data is truncated");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw std::invalid_argument("envelope checksum mismatch");
  }
  ByteReader reader(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(reader.read<std::uint8_t>());
  if (std::memcmp(magic, kEnvelopeMagic, 4) != 0) {
    throw std::invalid_argument("not an envelope file");
  }
  if (reader.read<std::uint16_t>() != kEnvelopeVersion) {
    throw std::invalid_argument("unsupported envelope version");
  }
  ParamEnvelope envelope;
  envelope.sender_id = reader.read<std::int32_t>();
  envelope.round = reader.read<std::int32_t>();
  const std::uint8_t kind = reader.read<std::uint8_t>();
  if (kind > static_cast<std::uint8_t>(PayloadKind::global_critic)) {
    throw std::invalid_argument("unknown envelope payload kind");
  }
  envelope.kind = static_cast<PayloadKind>(kind);
  const std::uint32_t block_count = reader.read<std::uint32_t>();
  envelope.payload.resize(block_count);
  for (std::uint32_t b = 0; b < block_count; ++b) {
    ApproximatorParams& block = envelope.payload[b];
    const std::uint32_t layer_count = reader.read<std::uint32_t>();
    block.shape.resize(layer_count);
    for (std::uint32_t l = 0; l < layer_count; ++l) {
      block.shape[l].input_dim = static_cast<int>(reader.read<std::uint32_t>());
      block.shape[l].output_dim = static_cast<int>(reader.read<std::uint32_t>());
      const std::uint8_t activation = reader.read<std::uint8_t>();
      if (activation > static_cast<std::uint8_t>(Activation::identity)) {
        throw std::invalid_argument("unknown activation in envelope");
      }
      block.shape[l].activation = static_cast<Activation>(activation);
    }
    validate_shape(block.shape);
    const std::uint64_t value_count = reader.read<std::uint64_t>();
    if (value_count != static_cast<std::uint64_t>(param_count(block.shape))) {
      throw std::invalid_argument("envelope value count disagrees with its shape");
    }
    block.values.resize(static_cast<Eigen::Index>(value_count));
    for (std::uint64_t i = 0; i < value_count; ++i) {
      block.values(static_cast<Eigen::Index>(i)) = reader.read<double>();
    }
  }
  if (reader.remaining() != 4) {
    throw std::invalid_argument("envelope has trailing bytes");
  }
  return envelope;
}

void save_envelope(const ParamEnvelope& envelope, const std::string& path) {
  const std::vector<std::uint8_t> bytes = envelope_to_bytes(envelope);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open envelope file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to envelope file: " + path);
}

ParamEnvelope load_envelope(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open envelope file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return envelope_from_bytes(bytes);
}

ParamEnvelope device_round(DeviceState& device, const EnvSpec& spec,
                           const DeviceRoundOptions& options, Rng& rng) {
  if (!device.dataset || device.dataset->transitions.empty()) {
    throw std::invalid_argument("device has no dataset");
  }
  if (options.local_steps < 0 || options.batch_size < 1) {
    throw std::invalid_argument("bad device round options");
  }
  validate(options.local);
  validate(options.rectifier);
  if (device.round_start_actor.values.size() == 0) {
    device.round_start_actor = device.actor;
  }
  device.flagged = false;
  device.flag_reason.clear();
  device.tau = 0;

  const int n = static_cast<int>(device.dataset->transitions.size());
  const bool forler_device = options.algorithm == Algorithm::forler;
  const bool td3bc_device = options.algorithm == Algorithm::fed_td3bc;
  const bool rectify = forler_device && options.rectification_enabled;
  LocalLossConfig critic_config = options.local;
  if (td3bc_device) critic_config.omega_c = 0.0;
  LocalLossConfig plain_actor_config = options.local;
  plain_actor_config.alpha_1 = 0.0;
  plain_actor_config.alpha_2 = 0.0;

  OptimizerState opt_q1 =
      make_optimizer(device.critics.q1.values.size(), options.learning_rate);
  OptimizerState opt_q2 =
      make_optimizer(device.critics.q2.values.size(), options.learning_rate);
  OptimizerState opt_actor =
      make_optimizer(device.actor.values.size(), options.learning_rate);

  Batch batch;
  bool have_batch = false;
  try {
    for (std::int64_t tau = 0; tau < options.local_steps; ++tau) {
      device.tau = tau;
      // The minibatch is held fixed between rectifier refreshes so cached
      // rectified actions stay row-aligned with it.
      const bool refresh = !rectify || tau % options.rectifier.delta == 0;
      if (refresh || !have_batch) {
        batch =
            encode_batch(*device.dataset, sample_indices(n, options.batch_size, rng),
                         spec);
        have_batch = true;
      }
      Matrix rectified;
      if (rectify) {
        if (spec.tabular) {
          const Matrix actor_actions = forward_batch(device.actor, batch.states);
          rectified = periodic_rectify_exhaustive(
              device.cache, tau, min_head_scorer(device.critics), batch.states,
              actor_actions, spec.n_actions, options.rectifier.delta);
        } else {
          rectified = periodic_rectify(device.cache, tau, device.critics,
                                       batch.states, device.actor, options.rectifier,
                                       rng);
        }
      } else {
        rectified = forward_batch(device.actor, batch.states);
      }
      const CriticLoss critic_loss =
          cql_critic_loss(device.critics, device.actor, batch, critic_config, rng);
      optimizer_step(device.critics.q1, opt_q1, critic_loss.grad_q1);
      optimizer_step(device.critics.q2, opt_q2, critic_loss.grad_q2);
      ActorLoss actor_loss;
      if (td3bc_device) {
        const Scalar lambda =
            td3bc_lambda(device.critics, batch, options.local.lambda_td3bc);
        actor_loss = td3bc_actor_loss(device.actor, device.critics, batch, lambda);
      } else if (forler_device) {
        actor_loss = rectified_actor_loss(device.actor, device.critics, batch,
                                          rectified, device.round_start_actor,
                                          options.local);
      } else {
        actor_loss = rectified_actor_loss(device.actor, device.critics, batch,
                                          rectified, device.round_start_actor,
                                          plain_actor_config);
      }
      optimizer_step(device.actor, opt_actor, actor_loss.grad);
      polyak_update(device.critics.q1_target, device.critics.q1, options.polyak_tau);
      polyak_update(device.critics.q2_target, device.critics.q2, options.polyak_tau);
      device.tau = tau + 1;
    }
  } catch (const std::exception& e) {
    device.flagged = true;
    device.flag_reason = e.what();
  }

  ParamEnvelope envelope;
  envelope.sender_id = device.device_id;
  envelope.kind = PayloadKind::critic_pair;
  envelope.payload = {device.critics.q1, device.critics.q2};
  return envelope;
}

namespace {

Matrix join_rows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

// Diagonal Gaussian sample around each mean row plus its log-density; used
// only when the entropy temperature is positive.
Matrix sample_actions(const ApproximatorParams& actor, const Vector& log_std,
                      const Matrix& states, Scalar beta_ent, Rng& rng,
                      Vector* log_prob) {
  Matrix actions = forward_batch(actor, states);
  if (log_prob != nullptr) *log_prob = Vector::Zero(actions.rows());
  if (beta_ent <= 0.0) return actions;
  if (log_std.size() != actions.cols()) {
    throw std::invalid_argument("log_std width disagrees with the action width");
  }
  constexpr Scalar kHalfLogTwoPi = 0.9189385332046727;
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < actions.rows(); ++i) {
    for (Eigen::Index d = 0; d < actions.cols(); ++d) {
      const Scalar xi = normal(rng);
      actions(i, d) += std::exp(log_std(d)) * xi;
      if (log_prob != nullptr) {
        (*log_prob)(i) += -log_std(d) - kHalfLogTwoPi - 0.5 * xi * xi;
      }
    }
  }
  return actions;
}

void check_server_loss_inputs(const std::vector<ApproximatorParams>& heads,
                              const Batch& batch, const ServerLossConfig& config) {
  if (heads.empty()) throw std::invalid_argument("ensemble is empty");
  if (batch.states.rows() == 0) throw std::invalid_argument("batch is empty");
  if (config.gamma < 0.0 || config.gamma >= 1.0 || config.omega_s < 0.0 ||
      config.beta_ent < 0.0) {
    throw std::invalid_argument("bad server loss configuration");
  }
}

}  // namespace

EnsembleCriticLoss server_critic_loss(const std::vector<ApproximatorParams>& heads,
                                      const std::vector<ApproximatorParams>& targets,
                                      const ApproximatorParams& actor,
                                      const Vector& log_std, const Batch& batch,
                                      const ServerLossConfig& config, Rng& rng) {
  check_server_loss_inputs(heads, batch, config);
  if (targets.size() != heads.size()) {
    throw std::invalid_argument("one target per ensemble head expected");
  }
  const Eigen::Index n = batch.states.rows();

  Vector next_log_prob;
  const Matrix next_actions = sample_actions(actor, log_std, batch.next_states,
                                             config.beta_ent, rng, &next_log_prob);
  Vector min_next = critic_values(targets[0], batch.next_states, next_actions);
  for (std::size_t h = 1; h < targets.size(); ++h) {
    min_next =
        min_next.cwiseMin(critic_values(targets[h], batch.next_states, next_actions));
  }
  const Vector target_value =
      batch.rewards.array() +
      config.gamma * (1.0 - batch.terminals.array()) *
          (min_next.array() - config.beta_ent * next_log_prob.array());
  if (!target_value.allFinite()) {
    throw std::runtime_error("server critic target is non-finite");
  }

  const Matrix pi_actions =
      sample_actions(actor, log_std, batch.states, config.beta_ent, rng, nullptr);
  const Matrix data_inputs = join_rows(batch.states, batch.actions);
  const Matrix pi_inputs = join_rows(batch.states, pi_actions);
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);

  EnsembleCriticLoss out;
  out.grads.resize(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const Vector data_q = forward_batch(heads[h], data_inputs).col(0);
    const Vector residual = data_q - target_value;
    out.loss += residual.squaredNorm() * inv_n;
    Matrix data_upstream = 2.0 * inv_n * residual;
    if (config.omega_s != 0.0) {
      const Vector pi_q = forward_batch(heads[h], pi_inputs).col(0);
      out.loss += config.omega_s * (pi_q.mean() - data_q.mean());
      data_upstream.array() -= config.omega_s * inv_n;
      out.grads[h] =
          backprop_batch(heads[h], data_inputs, data_upstream).param_grad +
          backprop_batch(heads[h], pi_inputs,
                         Matrix::Constant(n, 1, config.omega_s * inv_n))
              .param_grad;
    } else {
      out.grads[h] = backprop_batch(heads[h], data_inputs, data_upstream).param_grad;
    }
  }
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("server critic loss is non-finite");
  }
  return out;
}

ActorLoss server_actor_loss(const ApproximatorParams& actor, const Vector& log_std,
                            const std::vector<ApproximatorParams>& heads,
                            const Batch& batch, const ServerLossConfig& config,
                            Rng& rng) {
  check_server_loss_inputs(heads, batch, config);
  const Eigen::Index n = batch.states.rows();
  const Matrix mean = forward_batch(actor, batch.states);

  Matrix actions = mean;
  Scalar entropy_surcharge = 0.0;
  if (config.beta_ent > 0.0) {
    if (log_std.size() != actions.cols()) {
      throw std::invalid_argument("log_std width disagrees with the action width");
    }
    constexpr Scalar kHalfLogTwoPi = 0.9189385332046727;
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < actions.rows(); ++i) {
      for (Eigen::Index d = 0; d < actions.cols(); ++d) {
        const Scalar xi = normal(rng);
        actions(i, d) += std::exp(log_std(d)) * xi;
        entropy_surcharge +=
            config.beta_ent * (-log_std(d) - kHalfLogTwoPi - 0.5 * xi * xi) /
            static_cast<Scalar>(n);
      }
    }
  }

  const Matrix inputs = join_rows(batch.states, actions);
  Matrix head_values(n, static_cast<Eigen::Index>(heads.size()));
  for (std::size_t h = 0; h < heads.size(); ++h) {
    head_values.col(static_cast<Eigen::Index>(h)) =
        forward_batch(heads[h], inputs).col(0);
  }
  ActorLoss out;
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
  Matrix d_actions = Matrix::Zero(n, actions.cols());
  std::vector<Matrix> upstream(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) upstream[h] = Matrix::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index winner = 0;
    head_values.row(i).minCoeff(&winner);
    out.loss -= head_values(i, winner) * inv_n;
    upstream[static_cast<std::size_t>(winner)](i, 0) = -inv_n;
  }
  out.loss += entropy_surcharge;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    if ((upstream[h].array() != 0.0).any()) {
      d_actions += backprop_batch(heads[h], inputs, upstream[h])
                       .input_grad.rightCols(actions.cols());
    }
  }
  out.grad = backprop_batch(actor, batch.states, d_actions).param_grad;
  if (!std::isfinite(out.loss)) {
    throw std::runtime_error("server actor loss is non-finite");
  }
  return out;
}

void server_ensemble_update(ServerState& server, const EnvSpec& spec,
                            const std::vector<ParamEnvelope>& envelopes,
                            int n_grad_steps, const ServerUpdateOptions& options,
                            Rng& rng) {
  if (!server.dataset || server.dataset->transitions.empty()) {
    throw std::invalid_argument("server has no dataset");
  }
  if (n_grad_steps < 0 || options.batch_size < 1) {
    throw std::invalid_argument("bad server update options");
  }

  // Accept shape-consistent critic pairs; drop the rest.
  std::vector<const ParamEnvelope*> accepted;
  const std::vector<LayerSpec>* reference_shape = nullptr;
  for (const ParamEnvelope& envelope : envelopes) {
    if (envelope.kind != PayloadKind::critic_pair || envelope.payload.size() != 2) {
      continue;
    }
    bool ok = true;
    for (const ApproximatorParams& block : envelope.payload) {
      try {
        validate_shape(block.shape);
      } catch (const std::invalid_argument&) {
        ok = false;
        break;
      }
      if (block.values.size() != param_count(block.shape) ||
          block.shape.front().input_dim != spec.obs_dim + spec.act_dim ||
          block.shape.back().output_dim != 1) {
        ok = false;
        break;
      }
      if (reference_shape != nullptr && block.shape != *reference_shape) {
        ok = false;
        break;
      }
    }
    if (!ok || envelope.payload[0].shape != envelope.payload[1].shape) continue;
    if (reference_shape == nullptr) reference_shape = &envelope.payload[0].shape;
    accepted.push_back(&envelope);
  }
  if (accepted.empty()) {
    throw std::runtime_error("no valid critic envelopes for the server update");
  }

  server.ensemble.clear();
  for (const ParamEnvelope* envelope : accepted) {
    server.ensemble.push_back(envelope->payload[0]);
    server.ensemble.push_back(envelope->payload[1]);
  }
  server.ensemble_targets = server.ensemble;

  std::vector<OptimizerState> head_opts;
  head_opts.reserve(server.ensemble.size());
  for (const ApproximatorParams& head : server.ensemble) {
    head_opts.push_back(make_optimizer(head.values.size(), options.learning_rate));
  }
  OptimizerState actor_opt =
      make_optimizer(server.actor.values.size(), options.learning_rate);
  const ServerLossConfig loss_config{server.omega_s, server.beta_ent, options.gamma};
  const int n = static_cast<int>(server.dataset->transitions.size());
  for (int step = 0; step < n_grad_steps; ++step) {
    const Batch batch = encode_batch(
        *server.dataset, sample_indices(n, options.batch_size, rng), spec);
    const EnsembleCriticLoss critic_loss =
        server_critic_loss(server.ensemble, server.ensemble_targets, server.actor,
                           server.log_std, batch, loss_config, rng);
    for (std::size_t h = 0; h < server.ensemble.size(); ++h) {
      optimizer_step(server.ensemble[h], head_opts[h], critic_loss.grads[h]);
    }
    const ActorLoss actor_loss = server_actor_loss(
        server.actor, server.log_std, server.ensemble, batch, loss_config, rng);
    optimizer_step(server.actor, actor_opt, actor_loss.grad);
    for (std::size_t h = 0; h < server.ensemble.size(); ++h) {
      polyak_update(server.ensemble_targets[h], server.ensemble[h],
                    options.polyak_tau);
    }
  }
  server.round += 1;
}

std::pair<int, int> pessimistic_pair(const ServerState& server, const EnvSpec& spec,
                                     int probe_rows) {
  if (server.ensemble.size() < 2) {
    throw std::invalid_argument("need at least two ensemble heads");
  }
  if (!server.dataset || server.dataset->transitions.empty()) {
    throw std::invalid_argument("server has no dataset");
  }
  const int n = static_cast<int>(server.dataset->transitions.size());
  const int m = std::min(std::max(probe_rows, 1), n);
  std::vector<int> rows(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) rows[static_cast<std::size_t>(i)] = i;
  const Batch probe = encode_batch(*server.dataset, rows, spec);
  int first = -1;
  int second = -1;
  Scalar first_mean = 0.0;
  Scalar second_mean = 0.0;
  for (std::size_t h = 0; h < server.ensemble.size(); ++h) {
    const Scalar mean_q =
        critic_values(server.ensemble[h], probe.states, probe.actions).mean();
    if (first < 0 || mean_q < first_mean) {
      second = first;
      second_mean = first_mean;
      first = static_cast<int>(h);
      first_mean = mean_q;
    } else if (second < 0 || mean_q < second_mean) {
      second = static_cast<int>(h);
      second_mean = mean_q;
    }
  }
  return {first, second};
}

std::vector<ApproximatorParams> fedavg_aggregate(
    const std::vector<ParamEnvelope>& envelopes,
    const std::vector<std::size_t>& dataset_sizes) {
  if (envelopes.empty()) {
    throw std::invalid_argument("nothing to aggregate");
  }
  if (dataset_sizes.size() != envelopes.size()) {
    throw std::invalid_argument("need one dataset size per envelope");
  }
  std::size_t total = 0;
  for (std::size_t size : dataset_sizes) {
    if (size == 0) throw std::invalid_argument("dataset sizes must be positive");
    total += size;
  }
  const std::size_t slots = envelopes.front().payload.size();
  for (const ParamEnvelope& envelope : envelopes) {
    if (envelope.payload.size() != slots) {
      throw std::invalid_argument("envelopes disagree on payload layout");
    }
    for (std::size_t s = 0; s < slots; ++s) {
      if (envelope.payload[s].shape != envelopes.front().payload[s].shape) {
        throw std::invalid_argument("envelope shapes do not match");
      }
    }
  }
  // Anchored form: identical uploads come back bitwise identical.
  std::vector<ApproximatorParams> out(slots);
  for (std::size_t s = 0; s < slots; ++s) {
    const ApproximatorParams& anchor = envelopes.front().payload[s];
    Vector correction = Vector::Zero(anchor.values.size());
    for (std::size_t k = 0; k < envelopes.size(); ++k) {
      const Scalar weight =
          static_cast<Scalar>(dataset_sizes[k]) / static_cast<Scalar>(total);
      correction += weight * (envelopes[k].payload[s].values - anchor.values);
    }
    out[s].shape = anchor.shape;
    out[s].values = anchor.values + correction;
  }
  return out;
}

std::string metrics_csv_header() {
  return "round,algorithm,seed,global_return,device_id,device_return,q_evals,"
         "elapsed_ms\n";
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_csv_header();
  char line[256];
  for (const MetricsRow& row : rows) {
    std::snprintf(line, sizeof(line), "%d,%s,%llu,%.17g,%s,%.17g,%llu,%lld\n",
                  row.round, row.algorithm.c_str(),
                  static_cast<unsigned long long>(row.seed), row.global_return,
                  row.device_id.c_str(), row.device_return,
                  static_cast<unsigned long long>(row.q_evals),
                  static_cast<long long>(row.elapsed_ms));
    out += line;
  }
  return out;
}

namespace {

OfflineDataset dataset_for_spec(const ExperimentConfig& config,
                                const DatasetSpec& spec,
                                const std::string& data_dir) {
  if (!data_dir.empty()) {
    const std::string path = data_dir + "/" + config.env_id + "-" +
                             to_string(spec.quality) + "-" +
                             std::to_string(spec.seed) + ".ford";
    if (std::filesystem::exists(path)) {
      OfflineDataset dataset = load_dataset(path);
      if (dataset.env_id != config.env_id ||
          static_cast<int>(dataset.transitions.size()) != spec.size) {
        throw std::runtime_error("dataset file does not match its spec: " + path);
      }
      return dataset;
    }
  }
  auto env = make_env(config.env_id, spec.seed);
  return generate_dataset(*env, spec.quality, spec.size, spec.seed);
}

int thread_cap() {
  if (const char* raw = std::getenv("FORLER_THREADS")) {
    const int parsed = std::atoi(raw);
    if (parsed >= 1) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::int64_t ms_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - start)
      .count();
}

TrainingLog run_centralized(const ExperimentConfig& config, std::uint64_t seed,
                            const FederationData& data) {
  auto env = make_env(config.env_id, seed);
  const EnvSpec spec = env->spec();
  auto pooled = std::make_shared<OfflineDataset>();
  pooled->env_id = config.env_id;
  pooled->quality = Quality::mixed;
  pooled->seed = seed;
  for (const OfflineDataset& device_data : data.devices) {
    pooled->transitions.insert(pooled->transitions.end(),
                               device_data.transitions.begin(),
                               device_data.transitions.end());
  }
  if (pooled->transitions.empty()) {
    throw std::invalid_argument("pooled dataset is empty");
  }

  Rng init_rng = make_rng(seed, 0x1f17);
  DeviceState trainer;
  trainer.device_id = 0;
  trainer.actor = make_actor(spec.obs_dim, spec.act_dim, config.hidden, init_rng);
  trainer.critics =
      make_critic_pair(spec.obs_dim, spec.act_dim, config.hidden, init_rng);
  trainer.dataset = pooled;

  DeviceRoundOptions options;
  options.algorithm = Algorithm::centralized_cql;
  options.local_steps = config.local_steps;
  options.batch_size = config.batch_size;
  options.learning_rate = config.learning_rate;
  options.polyak_tau = config.polyak_tau;
  options.rectification_enabled = false;
  options.local = config.local;
  options.rectifier = config.rectifier;

  TrainingLog log;
  const std::string algorithm_name = to_string(config.algorithm);
  for (int round = 0; round <= config.rounds; ++round) {
    const auto started = std::chrono::steady_clock::now();
    if (round > 0) {
      trainer.round_start_actor = trainer.actor;
      Rng round_rng = make_rng(seed, 0xdec0de, static_cast<std::uint64_t>(round));
      device_round(trainer, spec, options, round_rng);
    }
    const Scalar value =
        evaluate_policy(*env, trainer.actor, config.eval_episodes,
                        derive_seed(seed, 0xeba1, static_cast<std::uint64_t>(round)))
            .mean;
    log.rows.push_back({round, algorithm_name, seed, value, "pooled", value, 0,
                        ms_since(started)});
    log.round_returns.push_back(value);
  }
  log.global_actor = trainer.actor;
  log.global_critics = trainer.critics;
  return log;
}

}  // namespace

FederationData materialize_data(const ExperimentConfig& config,
                                const std::string& data_dir) {
  validate(config);
  FederationData data;
  data.devices.reserve(config.device_data.size());
  for (const DatasetSpec& spec : config.device_data) {
    data.devices.push_back(dataset_for_spec(config, spec, data_dir));
  }
  data.server = dataset_for_spec(config, config.server_data, data_dir);
  return data;
}

TrainingLog run_federation(const ExperimentConfig& config, std::uint64_t seed,
                           const FederationData& data) {
  validate(config);
  if (config.algorithm == Algorithm::centralized_cql) {
    return run_centralized(config, seed, data);
  }
  if (data.devices.size() != static_cast<std::size_t>(config.n_devices)) {
    throw std::invalid_argument("need one dataset per device");
  }
  for (const OfflineDataset& dataset : data.devices) {
    if (dataset.transitions.empty()) {
      throw std::invalid_argument("device dataset is empty");
    }
  }
  if (data.server.transitions.empty()) {
    throw std::invalid_argument("server dataset is empty");
  }

  auto env = make_env(config.env_id, seed);
  const EnvSpec spec = env->spec();
  const int K = config.n_devices;
  const std::string algorithm_name = to_string(config.algorithm);
  const bool forler_run = config.algorithm == Algorithm::forler;

  Rng init_rng = make_rng(seed, 0x1f17);
  ApproximatorParams broadcast_actor =
      make_actor(spec.obs_dim, spec.act_dim, config.hidden, init_rng);
  CriticPair broadcast =
      make_critic_pair(spec.obs_dim, spec.act_dim, config.hidden, init_rng);

  ServerState server;
  server.actor = broadcast_actor;
  server.log_std = Vector::Constant(spec.act_dim, std::log(0.2));
  server.dataset = std::make_shared<OfflineDataset>(data.server);
  server.beta_ent = config.beta_ent;
  server.omega_s = config.omega_s;

  std::vector<DeviceState> devices(static_cast<std::size_t>(K));
  std::vector<std::shared_ptr<const OfflineDataset>> device_data;
  device_data.reserve(devices.size());
  for (int k = 0; k < K; ++k) {
    device_data.push_back(std::make_shared<OfflineDataset>(data.devices[size_t(k)]));
    devices[size_t(k)].device_id = k;
    devices[size_t(k)].dataset = device_data.back();
  }

  DeviceRoundOptions options;
  options.algorithm = config.algorithm;
  options.local_steps = config.local_steps;
  options.batch_size = config.batch_size;
  options.learning_rate = config.learning_rate;
  options.polyak_tau = config.polyak_tau;
  options.rectification_enabled = config.rectification_enabled;
  options.local = config.local;
  options.rectifier = config.rectifier;

  ServerUpdateOptions server_options;
  server_options.batch_size = config.server_batch_size;
  server_options.learning_rate = config.learning_rate;
  server_options.polyak_tau = config.polyak_tau;
  server_options.gamma = config.local.gamma;

  TrainingLog log;
  {
    const auto started = std::chrono::steady_clock::now();
    const Scalar value = evaluate_policy(*env, broadcast_actor, config.eval_episodes,
                                         derive_seed(seed, 0xeba1, 0))
                             .mean;
    log.rows.push_back(
        {0, algorithm_name, seed, value, "server", value, 0, ms_since(started)});
    log.round_returns.push_back(value);
  }

  const int workers = std::max(1, std::min(thread_cap(), K));
  for (int round = 1; round <= config.rounds; ++round) {
    const auto round_started = std::chrono::steady_clock::now();
    for (DeviceState& device : devices) {
      device.actor = broadcast_actor;
      device.critics.q1 = broadcast.q1;
      device.critics.q2 = broadcast.q2;
      device.critics.q1_target = broadcast.q1;
      device.critics.q2_target = broadcast.q2;
      device.round_start_actor = broadcast_actor;
    }

    std::vector<ParamEnvelope> envelopes(static_cast<std::size_t>(K));
    std::vector<Scalar> device_returns(static_cast<std::size_t>(K), 0.0);
    std::vector<std::int64_t> device_ms(static_cast<std::size_t>(K), 0);
    std::vector<std::string> worker_errors(static_cast<std::size_t>(workers));
    auto run_devices = [&](int worker) {
      try {
        auto eval_env = make_env(config.env_id, 0);
        for (int k = worker; k < K; k += workers) {
          const auto started = std::chrono::steady_clock::now();
          Rng device_rng =
              make_rng(seed, 0xdec0de,
                       static_cast<std::uint64_t>(round) * 4096 +
                           static_cast<std::uint64_t>(k));
          envelopes[size_t(k)] = device_round(devices[size_t(k)], spec, options,
                                              device_rng);
          envelopes[size_t(k)].round = round;
          device_returns[size_t(k)] =
              evaluate_policy(*eval_env, devices[size_t(k)].actor,
                              config.eval_episodes,
                              derive_seed(seed, 0xeba1,
                                          static_cast<std::uint64_t>(round)))
                  .mean;
          device_ms[size_t(k)] = ms_since(started);
        }
      } catch (const std::exception& e) {
        worker_errors[size_t(worker)] = e.what();
      }
    };
    if (workers == 1) {
      run_devices(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) pool.emplace_back(run_devices, w);
      for (std::thread& worker : pool) worker.join();
    }
    for (const std::string& error : worker_errors) {
      if (!error.empty()) throw std::runtime_error(error);
    }

    std::vector<ParamEnvelope> valid;
    std::vector<std::size_t> valid_sizes;
    std::vector<ParamEnvelope> valid_actors;
    for (int k = 0; k < K; ++k) {
      if (devices[size_t(k)].flagged) continue;
      valid.push_back(envelopes[size_t(k)]);
      valid_sizes.push_back(devices[size_t(k)].dataset->transitions.size());
      ParamEnvelope actor_envelope;
      actor_envelope.sender_id = k;
      actor_envelope.round = round;
      actor_envelope.kind = PayloadKind::global_actor;
      actor_envelope.payload = {devices[size_t(k)].actor};
      valid_actors.push_back(std::move(actor_envelope));
    }
    if (valid.empty()) {
      throw std::runtime_error("every device failed its round");
    }

    if (forler_run) {
      Rng server_rng =
          make_rng(seed, 0x5e77e4, static_cast<std::uint64_t>(round));
      server_ensemble_update(server, spec, valid, config.server_grad_steps,
                             server_options, server_rng);
      const std::pair<int, int> pair =
          pessimistic_pair(server, spec, config.server_batch_size);
      broadcast.q1 = server.ensemble[static_cast<std::size_t>(pair.first)];
      broadcast.q2 = server.ensemble[static_cast<std::size_t>(pair.second)];
      broadcast.q1_target = broadcast.q1;
      broadcast.q2_target = broadcast.q2;
      broadcast_actor = server.actor;
    } else {
      const std::vector<ApproximatorParams> critics =
          fedavg_aggregate(valid, valid_sizes);
      const std::vector<ApproximatorParams> actors =
          fedavg_aggregate(valid_actors, valid_sizes);
      broadcast.q1 = critics[0];
      broadcast.q2 = critics[1];
      broadcast.q1_target = critics[0];
      broadcast.q2_target = critics[1];
      broadcast_actor = actors[0];
      server.actor = broadcast_actor;
      server.round += 1;
    }

    const Scalar global_return =
        evaluate_policy(*env, broadcast_actor, config.eval_episodes,
                        derive_seed(seed, 0xeba1, static_cast<std::uint64_t>(round)))
            .mean;
    std::uint64_t total_q_evals = 0;
    for (int k = 0; k < K; ++k) {
      total_q_evals += devices[size_t(k)].cache.q_eval_count;
      log.rows.push_back({round, algorithm_name, seed, global_return,
                          std::to_string(k), device_returns[size_t(k)],
                          devices[size_t(k)].cache.q_eval_count,
                          device_ms[size_t(k)]});
    }
    log.rows.push_back({round, algorithm_name, seed, global_return, "server",
                        global_return, total_q_evals, ms_since(round_started)});
    log.round_returns.push_back(global_return);
  }

  log.global_actor = broadcast_actor;
  log.global_critics = broadcast;
  return log;
}

void write_checkpoint(const std::string& dir, const TrainingLog& log,
                      const ExperimentConfig& config, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const std::string stem = dir + "/checkpoint-" + std::to_string(seed);
  ParamEnvelope actor_envelope;
  actor_envelope.sender_id = -1;
  actor_envelope.round = config.rounds;
  actor_envelope.kind = PayloadKind::global_actor;
  actor_envelope.payload = {log.global_actor};
  save_envelope(actor_envelope, stem + "-actor.fenv");
  ParamEnvelope critic_envelope;
  critic_envelope.sender_id = -1;
  critic_envelope.round = config.rounds;
  critic_envelope.kind = PayloadKind::global_critic;
  critic_envelope.payload = {log.global_critics.q1, log.global_critics.q2};
  save_envelope(critic_envelope, stem + "-critic.fenv");

  std::ofstream manifest(dir + "/manifest-" + std::to_string(seed) + ".txt",
                         std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write checkpoint manifest");
  manifest << "round: " << config.rounds << "\n";
  manifest << "seed: " << seed << "\n";
  manifest << "seeds:";
  for (std::uint64_t s : config.seeds) manifest << " " << s;
  manifest << "\n";
  char hash[16];
  std::snprintf(hash, sizeof(hash), "%08x", config_hash(config));
  manifest << "config_hash: " << hash << "\n";
}

}  // namespace forler
