#include "forler/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace forler {

using Json = nlohmann::ordered_json;

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::forler: return "forler";
    case Algorithm::fed_cql: return "fed_cql";
    case Algorithm::fed_td3bc: return "fed_td3bc";
    case Algorithm::centralized_cql: return "centralized_cql";
  }
  throw std::invalid_argument("unknown algorithm value");
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "forler") return Algorithm::forler;
  if (s == "fed_cql") return Algorithm::fed_cql;
  if (s == "fed_td3bc") return Algorithm::fed_td3bc;
  if (s == "centralized_cql") return Algorithm::centralized_cql;
  throw std::invalid_argument(
      "unknown algorithm '" + s +
      "' (expected forler|fed_cql|fed_td3bc|centralized_cql)");
}

ExperimentConfig default_config(const std::string& env_id) {
  ExperimentConfig config;
  config.env_id = env_id;
  auto env = make_env(env_id, 0);
  config.local.gamma = env->spec().gamma;
  config.local.action_low = env->spec().action_low;
  config.local.action_high = env->spec().action_high;
  config.rectifier.action_low = env->spec().action_low;
  config.rectifier.action_high = env->spec().action_high;
  config.device_data.resize(static_cast<std::size_t>(config.n_devices));
  for (std::size_t k = 0; k < config.device_data.size(); ++k) {
    config.device_data[k].seed = 100 + k;
  }
  config.server_data.seed = 99;
  return config;
}

void validate(const ExperimentConfig& config) {
  make_env(config.env_id, 0);  // throws on unknown id
  if (config.n_devices < 1) {
    throw std::invalid_argument("n_devices must be at least 1");
  }
  if (config.rounds < 0 || config.local_steps < 0) {
    throw std::invalid_argument("rounds and local_steps must be non-negative");
  }
  if (config.batch_size < 1 || config.server_batch_size < 1) {
    throw std::invalid_argument("batch sizes must be positive");
  }
  if (config.device_data.size() != static_cast<std::size_t>(config.n_devices)) {
    throw std::invalid_argument("device_data must list one spec per device");
  }
  for (const DatasetSpec& spec : config.device_data) {
    if (spec.size < 1) throw std::invalid_argument("dataset size must be positive");
  }
  if (config.server_data.size < 1) {
    throw std::invalid_argument("server dataset size must be positive");
  }
  validate(config.local);
  validate(config.rectifier);
  if (config.beta_ent < 0.0 || config.omega_s < 0.0) {
    throw std::invalid_argument("beta_ent and omega_s must be non-negative");
  }
  if (config.server_grad_steps < 0) {
    throw std::invalid_argument("server_grad_steps must be non-negative");
  }
  if (config.eval_episodes < 1) {
    throw std::invalid_argument("eval_episodes must be positive");
  }
  if (config.seeds.empty()) {
    throw std::invalid_argument("seed list must not be empty");
  }
  if (config.hidden.empty()) {
    throw std::invalid_argument("hidden layer list must not be empty");
  }
  for (int width : config.hidden) {
    if (width < 1) throw std::invalid_argument("hidden widths must be positive");
  }
  if (!(config.learning_rate > 0.0) || !(config.polyak_tau > 0.0) ||
      config.polyak_tau > 1.0) {
    throw std::invalid_argument("learning_rate and polyak_tau must be positive");
  }
}

namespace {

void reject_unknown_keys(const Json& object, const std::set<std::string>& known,
                         const std::string& scope) {
  for (const auto& item : object.items()) {
    if (known.find(item.key()) == known.end()) {
      throw std::invalid_argument("unknown config key '" + scope + item.key() + "'");
    }
  }
}

template <typename T>
void read_field(const Json& object, const char* key, T& out) {
  auto it = object.find(key);
  if (it != object.end()) out = it->get<T>();
}

DatasetSpec dataset_spec_from_json(const Json& object, const std::string& scope) {
  if (!object.is_object()) {
    throw std::invalid_argument("'" + scope + "' must be an object");
  }
  reject_unknown_keys(object, {"quality", "size", "seed"}, scope + ".");
  DatasetSpec spec;
  if (object.contains("quality")) {
    spec.quality = quality_from_string(object.at("quality").get<std::string>());
  }
  read_field(object, "size", spec.size);
  read_field(object, "seed", spec.seed);
  return spec;
}

Json dataset_spec_to_json(const DatasetSpec& spec) {
  Json object;
  object["quality"] = to_string(spec.quality);
  object["size"] = spec.size;
  object["seed"] = spec.seed;
  return object;
}

void local_from_json(const Json& object, LocalLossConfig& local) {
  reject_unknown_keys(object,
                      {"omega_c", "alpha_1", "alpha_2", "lambda_td3bc", "gamma",
                       "mu_samples", "mu_noise_std", "action_low", "action_high"},
                      "local.");
  read_field(object, "omega_c", local.omega_c);
  read_field(object, "alpha_1", local.alpha_1);
  read_field(object, "alpha_2", local.alpha_2);
  read_field(object, "lambda_td3bc", local.lambda_td3bc);
  read_field(object, "gamma", local.gamma);
  read_field(object, "mu_samples", local.mu_samples);
  read_field(object, "mu_noise_std", local.mu_noise_std);
  read_field(object, "action_low", local.action_low);
  read_field(object, "action_high", local.action_high);
}

void rectifier_from_json(const Json& object, RectifierConfig& rectifier) {
  reject_unknown_keys(object,
                      {"population", "iterations", "beta_w", "delta", "init_std",
                       "std_floor", "action_low", "action_high"},
                      "rectifier.");
  read_field(object, "population", rectifier.population);
  read_field(object, "iterations", rectifier.iterations);
  read_field(object, "beta_w", rectifier.beta_w);
  read_field(object, "delta", rectifier.delta);
  read_field(object, "init_std", rectifier.init_std);
  read_field(object, "std_floor", rectifier.std_floor);
  read_field(object, "action_low", rectifier.action_low);
  read_field(object, "action_high", rectifier.action_high);
}

}  // namespace

ExperimentConfig config_from_text(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) {
    throw std::invalid_argument("config root must be an object");
  }
  reject_unknown_keys(
      root,
      {"algorithm", "env_id", "n_devices", "rounds", "local_steps", "batch_size",
       "device_data", "server_data", "local", "rectifier", "beta_ent", "omega_s",
       "server_grad_steps", "server_batch_size", "eval_episodes", "seeds", "hidden",
       "learning_rate", "polyak_tau", "rectification_enabled"},
      "");

  const std::string env_id =
      root.contains("env_id") ? root.at("env_id").get<std::string>() : "pointmass-2d";
  ExperimentConfig config = default_config(env_id);
  if (root.contains("algorithm")) {
    config.algorithm = algorithm_from_string(root.at("algorithm").get<std::string>());
  }
  read_field(root, "n_devices", config.n_devices);
  read_field(root, "rounds", config.rounds);
  read_field(root, "local_steps", config.local_steps);
  read_field(root, "batch_size", config.batch_size);
  if (root.contains("device_data")) {
    const Json& list = root.at("device_data");
    if (!list.is_array()) {
      throw std::invalid_argument("'device_data' must be an array");
    }
    config.device_data.clear();
    for (std::size_t k = 0; k < list.size(); ++k) {
      config.device_data.push_back(
          dataset_spec_from_json(list[k], "device_data[" + std::to_string(k) + "]"));
    }
  } else if (config.n_devices != static_cast<int>(config.device_data.size())) {
    // Keep the defaulted list usable when only n_devices was given.
    config.device_data.resize(static_cast<std::size_t>(config.n_devices));
    for (std::size_t k = 0; k < config.device_data.size(); ++k) {
      config.device_data[k].seed = 100 + k;
    }
  }
  if (root.contains("server_data")) {
    config.server_data = dataset_spec_from_json(root.at("server_data"), "server_data");
  }
  if (root.contains("local")) local_from_json(root.at("local"), config.local);
  if (root.contains("rectifier")) {
    rectifier_from_json(root.at("rectifier"), config.rectifier);
  }
  read_field(root, "beta_ent", config.beta_ent);
  read_field(root, "omega_s", config.omega_s);
  read_field(root, "server_grad_steps", config.server_grad_steps);
  read_field(root, "server_batch_size", config.server_batch_size);
  read_field(root, "eval_episodes", config.eval_episodes);
  read_field(root, "seeds", config.seeds);
  read_field(root, "hidden", config.hidden);
  read_field(root, "learning_rate", config.learning_rate);
  read_field(root, "polyak_tau", config.polyak_tau);
  read_field(root, "rectification_enabled", config.rectification_enabled);
  validate(config);
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return config_from_text(buffer.str());
}

std::string effective_config_text(const ExperimentConfig& config) {
  Json root;
  root["algorithm"] = to_string(config.algorithm);
  root["env_id"] = config.env_id;
  root["n_devices"] = config.n_devices;
  root["rounds"] = config.rounds;
  root["local_steps"] = config.local_steps;
  root["batch_size"] = config.batch_size;
  root["device_data"] = Json::array();
  for (const DatasetSpec& spec : config.device_data) {
    root["device_data"].push_back(dataset_spec_to_json(spec));
  }
  root["server_data"] = dataset_spec_to_json(config.server_data);
  Json local;
  local["omega_c"] = config.local.omega_c;
  local["alpha_1"] = config.local.alpha_1;
  local["alpha_2"] = config.local.alpha_2;
  local["lambda_td3bc"] = config.local.lambda_td3bc;
  local["gamma"] = config.local.gamma;
  local["mu_samples"] = config.local.mu_samples;
  local["mu_noise_std"] = config.local.mu_noise_std;
  local["action_low"] = config.local.action_low;
  local["action_high"] = config.local.action_high;
  root["local"] = local;
  Json rectifier;
  rectifier["population"] = config.rectifier.population;
  rectifier["iterations"] = config.rectifier.iterations;
  rectifier["beta_w"] = config.rectifier.beta_w;
  rectifier["delta"] = config.rectifier.delta;
  rectifier["init_std"] = config.rectifier.init_std;
  rectifier["std_floor"] = config.rectifier.std_floor;
  rectifier["action_low"] = config.rectifier.action_low;
  rectifier["action_high"] = config.rectifier.action_high;
  root["rectifier"] = rectifier;
  root["beta_ent"] = config.beta_ent;
  root["omega_s"] = config.omega_s;
  root["server_grad_steps"] = config.server_grad_steps;
  root["server_batch_size"] = config.server_batch_size;
  root["eval_episodes"] = config.eval_episodes;
  root["seeds"] = config.seeds;
  root["hidden"] = config.hidden;
  root["learning_rate"] = config.learning_rate;
  root["polyak_tau"] = config.polyak_tau;
  root["rectification_enabled"] = config.rectification_enabled;
  return root.dump(2) + "\n";
}

std::uint32_t config_hash(const ExperimentConfig& config) {
  const std::string text = effective_config_text(config);
  return crc32(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

}  // namespace forler
