#pragma once

#include "forler/offline_core.hpp"
#include "forler/rectifier.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace forler {

enum class Algorithm : std::uint8_t {
  forler = 0,
  fed_cql = 1,
  fed_td3bc = 2,
  centralized_cql = 3,
};

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct DatasetSpec {
  Quality quality = Quality::medium;
  int size = 20000;
  std::uint64_t seed = 0;
};

/// One experiment: datasets, training scale, and every hyperparameter that the
/// run depends on. Loaded from JSON; unknown keys are rejected at every level
/// and the effective (fully defaulted) form can be written back out.
struct ExperimentConfig {
  Algorithm algorithm = Algorithm::forler;
  std::string env_id = "pointmass-2d";
  int n_devices = 4;
  int rounds = 30;       // communication rounds T
  int local_steps = 200; // device gradient steps per round
  int batch_size = 256;
  std::vector<DatasetSpec> device_data;  // one entry per device
  DatasetSpec server_data;
  LocalLossConfig local;
  RectifierConfig rectifier;
  Scalar beta_ent = 0.0;
  Scalar omega_s = 5.0;
  int server_grad_steps = 200;
  int server_batch_size = 256;
  int eval_episodes = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<int> hidden = {64, 64};
  Scalar learning_rate = 3e-4;
  Scalar polyak_tau = 0.005;
  bool rectification_enabled = true;
};

/// Fills env-dependent defaults (discount, device dataset specs) for an id.
ExperimentConfig default_config(const std::string& env_id);

void validate(const ExperimentConfig& config);

ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Every field, explicitly, in a fixed key order; parsing this text yields the
/// same config and re-emitting it yields the same text.
std::string effective_config_text(const ExperimentConfig& config);

std::uint32_t config_hash(const ExperimentConfig& config);

}  // namespace forler
