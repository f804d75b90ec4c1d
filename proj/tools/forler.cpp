#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "forler/config.hpp"
#include "forler/federation.hpp"
#include "forler/verify.hpp"

namespace {

using namespace forler;

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream stream(csv);
  std::string token;
  while (std::getline(stream, token, ',')) {
    std::size_t used = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(token, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad seed '" + token + "' in --seeds");
    }
    if (used != token.size()) {
      throw std::invalid_argument("bad seed '" + token + "' in --seeds");
    }
    seeds.push_back(value);
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds list is empty");
  return seeds;
}

std::string dataset_filename(const ExperimentConfig& config,
                             const DatasetSpec& spec) {
  return config.env_id + "-" + to_string(spec.quality) + "-" +
         std::to_string(spec.seed) + ".ford";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_effective_config(const ExperimentConfig& config, const std::string& dir) {
  write_text(dir + "/effective-config.json", effective_config_text(config));
}

/// Generates any dataset file that is not already present, so repeated runs
/// and sibling ablation arms share one copy per (env, quality, seed).
void ensure_datasets(const ExperimentConfig& config, const std::string& dir) {
  std::vector<DatasetSpec> specs = config.device_data;
  specs.push_back(config.server_data);
  std::set<std::string> written;
  for (const DatasetSpec& spec : specs) {
    const std::string name = dataset_filename(config, spec);
    if (!written.insert(name).second) continue;
    const std::string path = dir + "/" + name;
    if (std::filesystem::exists(path)) continue;
    auto env = make_env(config.env_id, spec.seed);
    save_dataset(generate_dataset(*env, spec.quality, spec.size, spec.seed), path);
  }
}

int cmd_gen_data(const ExperimentConfig& config, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_effective_config(config, out_dir);
  std::vector<DatasetSpec> specs = config.device_data;
  specs.push_back(config.server_data);
  std::set<std::string> written;
  for (const DatasetSpec& spec : specs) {
    const std::string name = dataset_filename(config, spec);
    const std::string path = out_dir + "/" + name;
    if (written.insert(name).second) {
      auto env = make_env(config.env_id, spec.seed);
      save_dataset(generate_dataset(*env, spec.quality, spec.size, spec.seed), path);
    }
    std::printf("%s\n", path.c_str());
  }
  return 0;
}

struct RunOutcome {
  std::uint64_t seed = 0;
  Scalar final_return = 0.0;
  std::uint64_t q_evals = 0;
};

RunOutcome run_one_seed(const ExperimentConfig& config, std::uint64_t seed,
                        const FederationData& data, const std::string& dir) {
  const TrainingLog log = run_federation(config, seed, data);
  const std::string name =
      to_string(config.algorithm) + "-seed-" + std::to_string(seed) + ".csv";
  write_text(dir + "/" + name, metrics_csv(log.rows));
  write_checkpoint(dir, log, config, seed);
  RunOutcome outcome;
  outcome.seed = seed;
  outcome.final_return = log.round_returns.back();
  for (auto it = log.rows.rbegin(); it != log.rows.rend(); ++it) {
    if (it->round != log.rows.back().round) break;
    if (it->device_id == "server") {
      outcome.q_evals = it->q_evals;
      break;
    }
    if (it->device_id == "pooled") break;
  }
  return outcome;
}

int cmd_train(const ExperimentConfig& config, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_effective_config(config, out_dir);
  const FederationData data = materialize_data(config, out_dir);
  for (const std::uint64_t seed : config.seeds) {
    const RunOutcome outcome = run_one_seed(config, seed, data, out_dir);
    std::printf("%s seed %llu final_return %.6g q_evals %llu\n",
                to_string(config.algorithm).c_str(),
                static_cast<unsigned long long>(seed), outcome.final_return,
                static_cast<unsigned long long>(outcome.q_evals));
  }
  return 0;
}

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", value);
  return buf;
}

std::vector<std::pair<std::string, ExperimentConfig>> build_arms(
    const std::string& study, const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> arms;
  if (study == "delta_sweep") {
    for (const int delta : {1, 2, 5, 10, 20}) {
      ExperimentConfig arm = base;
      arm.algorithm = Algorithm::forler;
      arm.rectification_enabled = true;
      arm.rectifier.delta = delta;
      arms.emplace_back("delta-" + std::to_string(delta), arm);
    }
  } else if (study == "rectification_onoff") {
    for (const bool enabled : {true, false}) {
      ExperimentConfig arm = base;
      arm.algorithm = Algorithm::forler;
      arm.rectification_enabled = enabled;
      arms.emplace_back(enabled ? "on" : "off", arm);
    }
  } else if (study == "pollution") {
    for (const Algorithm algorithm :
         {Algorithm::forler, Algorithm::fed_cql, Algorithm::fed_td3bc}) {
      ExperimentConfig arm = base;
      arm.algorithm = algorithm;
      arms.emplace_back(to_string(algorithm), arm);
    }
  } else if (study == "alpha_grid") {
    for (const double alpha_1 : {0.1, 1.0, 10.0}) {
      for (const double alpha_2 : {0.01, 0.1, 1.0}) {
        ExperimentConfig arm = base;
        arm.algorithm = Algorithm::forler;
        arm.local.alpha_1 = alpha_1;
        arm.local.alpha_2 = alpha_2;
        arms.emplace_back(
            "a1-" + format_number(alpha_1) + "-a2-" + format_number(alpha_2), arm);
      }
    }
  } else if (study == "device_count") {
    for (const int devices : {2, 4, 6}) {
      ExperimentConfig arm = base;
      arm.n_devices = devices;
      const DatasetSpec prototype =
          base.device_data.empty() ? DatasetSpec{} : base.device_data.front();
      arm.device_data.assign(static_cast<std::size_t>(devices), prototype);
      for (int k = 0; k < devices; ++k) {
        arm.device_data[static_cast<std::size_t>(k)].seed =
            100 + static_cast<std::uint64_t>(k);
      }
      arms.emplace_back("devices-" + std::to_string(devices), arm);
    }
  } else {
    throw std::invalid_argument("unknown study '" + study + "'");
  }
  return arms;
}

int cmd_ablate(const std::string& study, const ExperimentConfig& base,
               const std::string& out_dir) {
  const auto arms = build_arms(study, base);
  std::filesystem::create_directories(out_dir);
  std::string runs_csv = "study,arm,seed,final_return,q_evals\n";
  std::string summary_csv =
      "study,arm,seeds,mean_final_return,std_final_return,q_eval_total\n";
  for (const auto& [arm_name, arm_config] : arms) {
    const std::string arm_dir = out_dir + "/" + study + "/" + arm_name;
    std::filesystem::create_directories(arm_dir);
    write_effective_config(arm_config, arm_dir);
    ensure_datasets(arm_config, out_dir);
    const FederationData data = materialize_data(arm_config, out_dir);
    std::vector<RunOutcome> outcomes;
    for (const std::uint64_t seed : arm_config.seeds) {
      outcomes.push_back(run_one_seed(arm_config, seed, data, arm_dir));
      char line[160];
      std::snprintf(line, sizeof(line), "%s,%s,%llu,%.17g,%llu\n", study.c_str(),
                    arm_name.c_str(),
                    static_cast<unsigned long long>(outcomes.back().seed),
                    outcomes.back().final_return,
                    static_cast<unsigned long long>(outcomes.back().q_evals));
      runs_csv += line;
    }
    Scalar mean = 0.0;
    for (const RunOutcome& outcome : outcomes) mean += outcome.final_return;
    mean /= static_cast<Scalar>(outcomes.size());
    Scalar variance = 0.0;
    std::uint64_t q_total = 0;
    for (const RunOutcome& outcome : outcomes) {
      variance += (outcome.final_return - mean) * (outcome.final_return - mean);
      q_total += outcome.q_evals;
    }
    variance /= static_cast<Scalar>(outcomes.size());
    char line[200];
    std::snprintf(line, sizeof(line), "%s,%s,%zu,%.17g,%.17g,%llu\n", study.c_str(),
                  arm_name.c_str(), outcomes.size(), mean, std::sqrt(variance),
                  static_cast<unsigned long long>(q_total));
    summary_csv += line;
    std::printf("%s %s mean_final_return %.6g\n", study.c_str(), arm_name.c_str(),
                mean);
  }
  write_text(out_dir + "/" + study + "-runs.csv", runs_csv);
  write_text(out_dir + "/" + study + "-summary.csv", summary_csv);
  return 0;
}

int cmd_verify(const ExperimentConfig& config, const std::string& out_dir) {
  auto env = make_env(config.env_id, 0);
  if (!env->spec().tabular) {
    throw std::invalid_argument("verify needs a tabular environment, got '" +
                                config.env_id + "'");
  }
  const TabularMDP& mdp = *env->mdp();
  const ValueIterationResult vi = value_iteration(mdp);
  const TabularPolicy pi_star = deterministic_policy(vi.greedy, mdp.n_actions);
  const TabularPolicy behavior =
      epsilon_greedy_policy(vi.greedy, mdp.n_actions, 0.25);
  const Vector embedding = action_embedding(mdp.n_actions);
  const OfflineDataset dataset =
      generate_dataset(*env, config.server_data.quality, config.server_data.size,
                       config.server_data.seed);
  const TabularMDP model = empirical_mdp(dataset, mdp.n_states, mdp.n_actions,
                                         mdp.gamma, mdp.initial_distribution);

  std::filesystem::create_directories(out_dir);
  write_effective_config(config, out_dir);
  std::string report_text;
  std::string csv =
      "alpha,eta,applicable,holds,lhs,rhs,term_d,term_quad_pi,term_quad_beta,"
      "rhs_empirical,holds_empirical\n";
  auto add_cell = [&](const BoundReport& report, const std::string& label) {
    report_text += "# " + label + "\n" + bound_report_text(report) + "\n";
    char line[320];
    std::snprintf(line, sizeof(line),
                  "%.17g,%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  report.alpha, report.eta, report.applicable ? 1 : 0,
                  report.holds ? 1 : 0, report.lhs, report.rhs, report.term_d,
                  report.term_quad_pi, report.term_quad_beta, report.rhs_empirical,
                  report.holds_empirical ? 1 : 0);
    csv += line;
  };

  add_cell(check_theorem1(mdp, pi_star, pi_star, embedding, 1.0, 0.1),
           "identical policies");
  for (const double alpha : {0.1, 1.0}) {
    for (const double eta : {0.1, 0.5}) {
      add_cell(check_theorem1(mdp, pi_star, behavior, embedding, alpha, eta, &model),
               "alpha " + format_number(alpha) + " eta " + format_number(eta));
    }
  }
  write_text(out_dir + "/theorem1-report.txt", report_text);
  write_text(out_dir + "/theorem1.csv", csv);
  std::printf("%s", report_text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated offline reinforcement learning testbed"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  std::string seeds_csv;
  std::string study;

  CLI::App* gen = app.add_subcommand("gen-data", "write the configured datasets");
  CLI::App* train = app.add_subcommand("train", "run federated training per seed");
  CLI::App* ablate = app.add_subcommand("ablate", "run a paired ablation study");
  CLI::App* verify = app.add_subcommand("verify", "check the tabular policy bound");
  for (CLI::App* sub : {gen, train, ablate, verify}) {
    sub->add_option("--config", config_path, "experiment config (json)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seeds", seeds_csv, "comma-separated seed override");
  }
  ablate->add_option("--study", study, "study name")
      ->required()
      ->check(CLI::IsMember({"delta_sweep", "rectification_onoff", "pollution",
                             "alpha_grid", "device_count"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  ExperimentConfig config;
  try {
    config = load_experiment_config(config_path);
    if (!seeds_csv.empty()) {
      config.seeds = parse_seeds(seeds_csv);
      validate(config);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "forler: %s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out_dir);
    if (train->parsed()) return cmd_train(config, out_dir);
    if (ablate->parsed()) return cmd_ablate(study, config, out_dir);
    return cmd_verify(config, out_dir);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "forler: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "forler: %s\n", e.what());
    return 2;
  }
}
