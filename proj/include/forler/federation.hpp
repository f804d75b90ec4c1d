#pragma once

#include "forler/config.hpp"
#include "forler/offline_core.hpp"
#include "forler/rectifier.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace forler {

enum class PayloadKind : std::uint8_t {
  critic_pair = 0,
  global_actor = 1,
  global_critic = 2,
};

/// Unit of parameter transport between devices and the server. The byte codec
/// appends a CRC-32 that is verified on receipt.
struct ParamEnvelope {
  int sender_id = -1;
  int round = 0;
  PayloadKind kind = PayloadKind::critic_pair;
  std::vector<ApproximatorParams> payload;
};

std::vector<std::uint8_t> envelope_to_bytes(const ParamEnvelope& envelope);
ParamEnvelope envelope_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_envelope(const ParamEnvelope& envelope, const std::string& path);
ParamEnvelope load_envelope(const std::string& path);

struct DeviceState {
  int device_id = -1;
  ApproximatorParams actor;
  CriticPair critics;
  RectifiedCache cache;
  ApproximatorParams round_start_actor;  // anchor for the actor loss
  std::shared_ptr<const OfflineDataset> dataset;
  std::int64_t tau = 0;  // local step counter within the current round
  bool flagged = false;
  std::string flag_reason;
};

struct ServerState {
  ApproximatorParams actor;
  Vector log_std;  // state-independent; feeds only the entropy terms
  std::vector<ApproximatorParams> ensemble;
  std::vector<ApproximatorParams> ensemble_targets;
  std::shared_ptr<const OfflineDataset> dataset;
  int round = 0;
  Scalar beta_ent = 0.0;
  Scalar omega_s = 5.0;
};

struct DeviceRoundOptions {
  Algorithm algorithm = Algorithm::forler;
  int local_steps = 200;
  int batch_size = 256;
  Scalar learning_rate = 3e-4;
  Scalar polyak_tau = 0.005;
  bool rectification_enabled = true;
  LocalLossConfig local;
  RectifierConfig rectifier;
};

/// One local round: local_steps iterations of minibatch sampling (held fixed
/// between rectifier refreshes), periodic rectification, a critic step, an
/// actor step, and a polyak target update. Returns an envelope carrying the
/// final online critic pair. A non-finite loss flags the device and aborts
/// the round instead of throwing. An empty round_start_actor is snapshotted
/// from the entry actor.
ParamEnvelope device_round(DeviceState& device, const EnvSpec& spec,
                           const DeviceRoundOptions& options, Rng& rng);

struct ServerLossConfig {
  Scalar omega_s = 5.0;
  Scalar beta_ent = 0.0;
  Scalar gamma = 0.99;
};

struct EnsembleCriticLoss {
  Scalar loss = 0.0;
  std::vector<Vector> grads;  // one gradient per head
};

/// Every head regresses to one shared pessimistic target (min over target
/// heads at the actor's next action, minus beta_ent times its log-density)
/// plus an omega_s conservative gap on actor actions. beta_ent > 0 samples
/// actions through the fixed log_std; beta_ent = 0 uses the mean.
EnsembleCriticLoss server_critic_loss(const std::vector<ApproximatorParams>& heads,
                                      const std::vector<ApproximatorParams>& targets,
                                      const ApproximatorParams& actor,
                                      const Vector& log_std, const Batch& batch,
                                      const ServerLossConfig& config, Rng& rng);

/// Maximizes min-over-heads Q(s, pi(s)) minus the entropy surcharge; returned
/// as a loss to descend.
ActorLoss server_actor_loss(const ApproximatorParams& actor, const Vector& log_std,
                            const std::vector<ApproximatorParams>& heads,
                            const Batch& batch, const ServerLossConfig& config,
                            Rng& rng);

struct ServerUpdateOptions {
  int batch_size = 256;
  Scalar learning_rate = 3e-4;
  Scalar polyak_tau = 0.005;
  Scalar gamma = 0.99;
};

/// Replaces the ensemble with the heads of the accepted envelopes (two per
/// sender; shape-mismatched envelopes are dropped, zero survivors is an
/// error), then runs n_grad_steps alternating critic and actor steps on the
/// server dataset.
void server_ensemble_update(ServerState& server, const EnvSpec& spec,
                            const std::vector<ParamEnvelope>& envelopes,
                            int n_grad_steps, const ServerUpdateOptions& options,
                            Rng& rng);

/// Indices of the two ensemble heads with the lowest mean value over a fixed
/// probe batch read from the front of the server dataset.
std::pair<int, int> pessimistic_pair(const ServerState& server, const EnvSpec& spec,
                                     int probe_rows);

/// Dataset-size-weighted average, slot by slot across envelope payloads.
/// Identical uploads average to a bitwise copy of themselves.
std::vector<ApproximatorParams> fedavg_aggregate(
    const std::vector<ParamEnvelope>& envelopes,
    const std::vector<std::size_t>& dataset_sizes);

struct MetricsRow {
  int round = 0;
  std::string algorithm;
  std::uint64_t seed = 0;
  Scalar global_return = 0.0;
  std::string device_id;
  Scalar device_return = 0.0;
  std::uint64_t q_evals = 0;
  std::int64_t elapsed_ms = 0;
};

std::string metrics_csv_header();
std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct FederationData {
  std::vector<OfflineDataset> devices;
  OfflineDataset server;
};

/// Loads {env}-{quality}-{seed}.ford files from data_dir when present,
/// otherwise regenerates them deterministically from the specs.
FederationData materialize_data(const ExperimentConfig& config,
                                const std::string& data_dir = "");

struct TrainingLog {
  std::vector<MetricsRow> rows;
  ApproximatorParams global_actor;
  CriticPair global_critics;
  std::vector<Scalar> round_returns;  // global return per logged round
};

/// Runs one seed end to end: round 0 logs the initial policy, then each round
/// broadcasts, trains devices (in parallel, capped by FORLER_THREADS),
/// aggregates, and evaluates. Results depend only on (config, seed).
TrainingLog run_federation(const ExperimentConfig& config, std::uint64_t seed,
                           const FederationData& data);

/// Final actor and critic envelopes plus a manifest (round, seeds, config
/// hash) under dir, suffixed by the seed.
void write_checkpoint(const std::string& dir, const TrainingLog& log,
                      const ExperimentConfig& config, std::uint64_t seed);

}  // namespace forler
