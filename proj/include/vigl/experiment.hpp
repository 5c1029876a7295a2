#pragma once

// Experiment runner: collect -> train decoder -> select -> train policy ->
// evaluate, repeated over seeded trials, with CSV metrics.

#include "vigl/bandit.hpp"
#include "vigl/env.hpp"
#include "vigl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vigl {

enum class EnvKind { kSynthetic, kMnist };

EnvKind parse_env_kind(std::string_view name);
std::string_view to_string(EnvKind kind);

struct ExperimentConfig {
  EnvKind env = EnvKind::kSynthetic;
  std::filesystem::path mnist_dir;
  std::optional<std::filesystem::path> emnist_dir;
  int contexts = 10;
  int actions = 10;
  int feedback_dim = 14;
  double jitter = 0.05;
  std::size_t samples = 6000;
  FeedbackSpec noise;
  TrainConfig train;
  PolicyConfig policy;
  int trials = 8;
  std::uint64_t seed = 0;
  std::filesystem::path out = "vigl-out";
  bool write_training_logs = true;

  /// Desk-scale synthetic settings.
  static ExperimentConfig synthetic_defaults();
  /// Full MNIST protocol: K = 60000, 1000 epochs of batch 600 split
  /// 500/500 between critics and decoder.
  static ExperimentConfig mnist_defaults();

  /// Sets one field from its key=value spelling (the long CLI flag name
  /// without dashes). Throws ConfigError on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void validate() const;
  /// Flat key=value text, one per line; '#' starts a comment.
  void load(std::istream& in);
  void load_file(const std::filesystem::path& path);
  void save(std::ostream& out) const;
};

/// Every key accepted by ExperimentConfig::set, in a stable order.
const std::vector<std::string>& config_keys();

/// Trial i's seed, derived from (master seed, i) only.
std::uint64_t trial_seed(std::uint64_t master, int trial);
/// Independent stream for one stage of a trial.
std::uint64_t stream_seed(std::uint64_t trial_seed, std::string_view stage);

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double accuracy = 0;
  double std_err = 0;  // binomial standard error over the test contexts
  double decoded_return = 0;
  double behavior_decoded_return = 0;
  bool flipped = false;
  double seconds = 0;
};

struct RunSummary {
  double mean = 0;
  double std = 0;      // sample standard deviation over successful trials
  double std_err = 0;  // std / sqrt(n)
  int completed = 0;
  int excluded = 0;
};

RunSummary summarize(std::span<const TrialResult> trials);

struct RunResult {
  ExperimentConfig config;
  std::string run_id;
  std::vector<TrialResult> trials;
  RunSummary summary;
};

Environment make_environment(const ExperimentConfig& config);

/// One trial in memory. Throws on failure.
TrialResult run_trial(const ExperimentConfig& config, const Environment& env, int trial,
                      std::vector<EpochStats>* history = nullptr);

/// All trials; writes trials.csv, summary.csv and one training log per trial
/// under config.out. Failed trials are recorded and excluded from the summary.
RunResult run(const ExperimentConfig& config);

/// CSV header shared by trial and summary rows.
std::string_view results_header();
void write_trial_row(std::ostream& out, const RunResult& run, const TrialResult& trial);
void write_summary_row(std::ostream& out, const RunResult& run);

enum class SweepAxis { kBeta, kNoiseLevel, kFPair, kInputMode };

SweepAxis parse_sweep_axis(std::string_view name);  // beta | noise_level | f_pair | input_mode
std::string_view to_string(SweepAxis axis);

struct SweepRow {
  std::string value;
  RunSummary summary;
};

/// One run() per axis value (in config.out / "<axis>=<value>"), then a table
/// with one row per value in config.out / "sweep_<axis>.csv".
std::vector<SweepRow> sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const std::string> values);
void write_sweep_table(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace vigl
