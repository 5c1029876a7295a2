// vigl: command-line front end for data collection, decoder training,
// policy evaluation, experiment runs and sweeps, and exact oracle checks.

#include "vigl/bandit.hpp"
#include "vigl/errors.hpp"
#include "vigl/experiment.hpp"
#include "vigl/log.hpp"
#include "vigl/oracle.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace {

using vigl::ExperimentConfig;

// Every config key becomes a --key flag on every verb. The effective config is
// env defaults <- --config file <- explicit flags.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    for (const std::string& key : vigl::config_keys()) {
      app.add_option("--" + key, values[key], "config key " + key);
    }
  }

  ExperimentConfig resolve(const CLI::App& app) const {
    auto given = [&](const std::string& key) { return app.count("--" + key) > 0; };
    // The env flag picks the default profile, so look for it first in both
    // the flags and the config file.
    std::string env = given("env") ? values.at("env") : "synthetic";
    ExperimentConfig from_file;
    if (!config_file.empty()) {
      from_file.load_file(config_file);
      if (!given("env")) env = std::string(vigl::to_string(from_file.env));
    }
    ExperimentConfig c = vigl::parse_env_kind(env) == vigl::EnvKind::kMnist ? ExperimentConfig::mnist_defaults()
                                                                             : ExperimentConfig::synthetic_defaults();
    if (!config_file.empty()) c.load_file(config_file);
    for (const std::string& key : vigl::config_keys()) {
      if (given(key)) c.set(key, values.at(key));
    }
    return c;
  }
};

int cmd_collect(const ExperimentConfig& c) {
  c.noise.validate();
  const vigl::Environment env = vigl::make_environment(c);
  const vigl::UniformPolicy behavior(env.num_actions());
  const vigl::Dataset data = vigl::collect(env, behavior, c.samples, c.seed);
  vigl::save_dataset(c.out, data);
  std::cout << "wrote " << data.size() << " interactions to " << c.out.string() << '\n';
  return 0;
}

int cmd_train(const ExperimentConfig& c, const std::string& data_path) {
  c.train.validate();
  const vigl::Dataset data = vigl::load_dataset(data_path);
  vigl::TrainConfig train = c.train;
  train.seed = c.seed;
  vigl::IglTrainer trainer(train, data.context_dim(), data.info().num_actions, data.feedback_dim());
  const auto history = trainer.fit(data, [](const vigl::EpochStats& s) {
    if (s.epoch % 100 == 0) {
      vigl::log_info("epoch " + std::to_string(s.epoch) + " objective " + std::to_string(s.objective));
    }
  });
  const vigl::SelectionResult selected = vigl::select_decoder(trainer.final_decoder(), data);
  vigl::save_decoder(c.out, selected.decoder);
  std::ofstream log(c.out.string() + ".log.csv");
  vigl::write_training_log(log, history);
  std::cout << "behavior decoded return " << selected.behavior_decoded_return
            << (selected.flipped ? " (using 1 - psi)" : " (using psi)") << "\nwrote decoder to " << c.out.string()
            << '\n';
  return 0;
}

int cmd_eval(const ExperimentConfig& c, const std::string& data_path, const std::string& decoder_path) {
  const vigl::Dataset data = vigl::load_dataset(data_path);
  const vigl::RewardDecoder decoder = vigl::load_decoder(decoder_path);
  const vigl::Environment env = vigl::make_environment(c);
  const vigl::UniformPolicy behavior(data.info().num_actions);
  const Eigen::VectorXd psi = decoder.probability_values(data.contexts(), data.actions(), data.feedback());
  vigl::PolicyConfig pc = c.policy;
  pc.seed = c.seed;
  const vigl::LinearPolicy policy = vigl::train_policy(data, psi, behavior, pc);
  const vigl::PolicyReport report = vigl::evaluate(policy, env.test_contexts(), data, psi, behavior);
  std::cout << "accuracy," << report.accuracy << "\ndecoded_return," << report.decoded_return << "\ntrue_return,"
            << report.true_return << '\n';
  return 0;
}

int cmd_run(const ExperimentConfig& c) {
  const vigl::RunResult r = vigl::run(c);
  std::cout << r.run_id << ": accuracy " << r.summary.mean << " +- " << r.summary.std << " over "
            << r.summary.completed << " trials (" << r.summary.excluded << " excluded)\n";
  return r.summary.completed > 0 ? 0 : 1;
}

int cmd_sweep(const ExperimentConfig& c, const std::string& axis, const std::vector<std::string>& values) {
  const vigl::SweepAxis a = vigl::parse_sweep_axis(axis);
  const auto rows = vigl::sweep(c, a, values);
  vigl::write_sweep_table(std::cout, a, rows);
  return 0;
}

// Exact checks on the enumerable synthetic instance described by the config.
int cmd_oracle_check(const ExperimentConfig& c) {
  namespace o = vigl::oracle;
  const vigl::Environment env =
      vigl::make_synthetic_env(c.contexts, c.actions, c.feedback_dim, c.noise, c.jitter);
  const o::DiscreteJoint joint = env.enumerate_joint();
  joint.validate();

  const double beta = c.train.beta;
  const double i_yr = o::true_feedback_reward_mi(joint);
  o::GridOptions grid;
  grid.clamp = 0.0;
  grid.f1 = c.train.f1;
  grid.f2 = c.train.f2;
  const o::GridResult best = o::grid_minimize_objective(joint, beta, o::DecoderInput::kFeedback, grid);
  const double bound = beta * (std::numbers::ln2 - i_yr);
  const double flip_gap = std::abs(o::exact_objective(joint, best.best, beta, c.train.f1, c.train.f2) -
                                   o::exact_objective(joint, best.best.flipped(), beta, c.train.f1, c.train.f2));

  std::cout << std::setprecision(10) << "feedback support: " << joint.feedback_support().size() << " classes\n"
            << "I(Y;R): " << i_yr << '\n'
            << "tables evaluated: " << best.evaluated << '\n'
            << "minimum objective: " << best.value << '\n'
            << "I(Y;X,A|R_psi*): " << best.cmi << '\n'
            << "bound beta*(log 2 - I(Y;R)): " << bound << '\n'
            << "|objective(psi) - objective(1-psi)|: " << flip_gap << '\n';
  const bool ok = best.cmi <= bound + 1e-12 && best.value >= -beta * i_yr - 1e-9 && flip_gap <= 1e-12;
  std::cout << (ok ? "oracle checks passed\n" : "oracle checks FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational information-based interaction-grounded learning"};
  app.require_subcommand(1);

  ConfigFlags collect_flags, train_flags, eval_flags, run_flags, sweep_flags, oracle_flags;
  std::string data_path, decoder_path, axis;
  std::vector<std::string> values;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only print warnings and errors");

  auto* collect = app.add_subcommand("collect", "collect a logged dataset with the uniform policy");
  collect_flags.attach(*collect);
  auto* train = app.add_subcommand("train", "train a reward decoder on a logged dataset");
  train_flags.attach(*train);
  train->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "train and evaluate a policy under a saved decoder");
  eval_flags.attach(*eval);
  eval->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--decoder", decoder_path, "decoder checkpoint")->required()->check(CLI::ExistingFile);
  auto* run = app.add_subcommand("run", "full pipeline over seeded trials");
  run_flags.attach(*run);
  auto* sweep = app.add_subcommand("sweep", "one run per value of an axis");
  sweep_flags.attach(*sweep);
  sweep->add_option("--axis", axis, "beta | noise_level | f_pair | input_mode")->required();
  sweep->add_option("--values", values, "axis values")->required()->delimiter(',');
  auto* oracle = app.add_subcommand("oracle-check", "exact objective checks on the synthetic instance");
  oracle_flags.attach(*oracle);

  CLI11_PARSE(app, argc, argv);
  if (quiet) vigl::set_log_level(vigl::LogLevel::kWarning);

  try {
    if (*collect) return cmd_collect(collect_flags.resolve(*collect));
    if (*train) return cmd_train(train_flags.resolve(*train), data_path);
    if (*eval) return cmd_eval(eval_flags.resolve(*eval), data_path, decoder_path);
    if (*run) return cmd_run(run_flags.resolve(*run));
    if (*sweep) return cmd_sweep(sweep_flags.resolve(*sweep), axis, values);
    if (*oracle) return cmd_oracle_check(oracle_flags.resolve(*oracle));
  } catch (const vigl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
