#include "forler/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "doctest.h"

using namespace forler;

TEST_CASE("algorithm names round-trip") {
  for (Algorithm a : {Algorithm::forler, Algorithm::fed_cql, Algorithm::fed_td3bc,
                      Algorithm::centralized_cql}) {
    CHECK(algorithm_from_string(to_string(a)) == a);
  }
  CHECK_THROWS_AS(algorithm_from_string("fedprox"), std::invalid_argument);
}

TEST_CASE("defaults pull the discount and action box from the environment") {
  const ExperimentConfig config = default_config("chain-3");
  auto env = make_env("chain-3", 0);
  const EnvSpec spec = env->spec();
  CHECK(config.env_id == "chain-3");
  CHECK(config.local.gamma == spec.gamma);
  CHECK(config.local.action_low == spec.action_low);
  CHECK(config.local.action_high == spec.action_high);
  CHECK(config.rectifier.action_low == spec.action_low);
  CHECK(config.rectifier.action_high == spec.action_high);
  CHECK(config.device_data.size() == static_cast<std::size_t>(config.n_devices));
  for (std::size_t k = 0; k < config.device_data.size(); ++k) {
    CHECK(config.device_data[k].seed == 100 + k);
  }
  CHECK(config.server_data.seed == 99);
  CHECK_NOTHROW(validate(config));
}

TEST_CASE("effective config text is idempotent under reparsing") {
  const ExperimentConfig config = default_config("pointmass-2d");
  const std::string text = effective_config_text(config);
  const ExperimentConfig reparsed = config_from_text(text);
  CHECK(effective_config_text(reparsed) == text);
  CHECK(config_hash(reparsed) == config_hash(config));
}

TEST_CASE("overrides survive a parse and reach every nesting level") {
  const std::string text = R"({
    "algorithm": "fed_td3bc",
    "env_id": "chain-3",
    "n_devices": 2,
    "rounds": 3,
    "local_steps": 17,
    "local": {"omega_c": 1.5, "mu_samples": 4},
    "rectifier": {"delta": 2, "population": 8},
    "device_data": [
      {"quality": "expert", "size": 100, "seed": 5},
      {"quality": "random", "size": 200}
    ],
    "server_data": {"quality": "medium", "size": 300},
    "seeds": [42],
    "hidden": [16, 8],
    "rectification_enabled": false
  })";
  const ExperimentConfig config = config_from_text(text);
  CHECK(config.algorithm == Algorithm::fed_td3bc);
  CHECK(config.env_id == "chain-3");
  CHECK(config.n_devices == 2);
  CHECK(config.rounds == 3);
  CHECK(config.local_steps == 17);
  CHECK(config.local.omega_c == 1.5);
  CHECK(config.local.mu_samples == 4);
  CHECK(config.rectifier.delta == 2);
  CHECK(config.rectifier.population == 8);
  REQUIRE(config.device_data.size() == 2);
  CHECK(config.device_data[0].quality == Quality::expert);
  CHECK(config.device_data[0].size == 100);
  CHECK(config.device_data[0].seed == 5);
  CHECK(config.device_data[1].quality == Quality::random);
  CHECK(config.server_data.size == 300);
  REQUIRE(config.seeds.size() == 1);
  CHECK(config.seeds[0] == 42);
  CHECK(config.hidden == std::vector<int>{16, 8});
  CHECK_FALSE(config.rectification_enabled);

  // Unspecified fields keep their env-aware defaults.
  const ExperimentConfig defaults = default_config("chain-3");
  CHECK(config.local.gamma == defaults.local.gamma);
  CHECK(config.omega_s == defaults.omega_s);

  // A second pass over the effective form reproduces itself.
  const std::string effective = effective_config_text(config);
  CHECK(effective_config_text(config_from_text(effective)) == effective);
}

TEST_CASE("device count alone expands the dataset list") {
  const ExperimentConfig config =
      config_from_text(R"({"env_id": "chain-3", "n_devices": 6})");
  REQUIRE(config.device_data.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) CHECK(config.device_data[k].seed == 100 + k);
}

TEST_CASE("unknown keys are rejected with a scoped message") {
  CHECK_THROWS_WITH_AS(config_from_text(R"({"omega": 1})"),
                       "unknown config key 'omega'", std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_text(R"({"local": {"omega": 1}})"),
                       "unknown config key 'local.omega'", std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_text(R"({"rectifier": {"deltas": 1}})"),
                       "unknown config key 'rectifier.deltas'", std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      config_from_text(R"({"n_devices": 1, "device_data": [{"len": 9}]})"),
      "unknown config key 'device_data[0].len'", std::invalid_argument);
  CHECK_THROWS_WITH_AS(config_from_text(R"({"server_data": {"qual": "x"}})"),
                       "unknown config key 'server_data.qual'", std::invalid_argument);
}

TEST_CASE("malformed or invalid configs are rejected") {
  CHECK_THROWS_AS(config_from_text("not json"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text("[1, 2]"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"n_devices": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"eval_episodes": 0})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"seeds": []})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"hidden": [0]})"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"learning_rate": -1.0})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"beta_ent": -0.5})"), std::invalid_argument);
  CHECK_THROWS_AS(
      config_from_text(R"({"n_devices": 3, "device_data": [{"size": 10}]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(config_from_text(R"({"env_id": "mountaincar"})"),
                  std::invalid_argument);
}

TEST_CASE("config hash tracks content") {
  ExperimentConfig a = default_config("pointmass-2d");
  ExperimentConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  b.rounds += 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("configs load from disk") {
  const std::string path = "test_config_tmp.json";
  {
    std::ofstream out(path, std::ios::trunc);
    out << R"({"env_id": "chain-3", "rounds": 7})";
  }
  const ExperimentConfig config = load_experiment_config(path);
  CHECK(config.env_id == "chain-3");
  CHECK(config.rounds == 7);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_experiment_config("no_such_config.json"),
                  std::runtime_error);
}
