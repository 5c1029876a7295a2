#include "vigl/experiment.hpp"

#include "vigl/errors.hpp"
#include "vigl/log.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace vigl {

EnvKind parse_env_kind(std::string_view name) {
  if (name == "synthetic") return EnvKind::kSynthetic;
  if (name == "mnist") return EnvKind::kMnist;
  throw ConfigError("unknown env '" + std::string(name) + "' (expected mnist or synthetic)");
}

std::string_view to_string(EnvKind kind) { return kind == EnvKind::kSynthetic ? "synthetic" : "mnist"; }

ExperimentConfig ExperimentConfig::synthetic_defaults() {
  ExperimentConfig c;
  c.train.epochs = 800;
  c.train.critic_warmup = 200;
  c.train.schedule = Schedule::kSimultaneous;
  c.train.shape = {32, 16, 32, Activation::kTanh};
  c.policy.shape = {32, 16, 0, Activation::kTanh};
  return c;
}

ExperimentConfig ExperimentConfig::mnist_defaults() {
  ExperimentConfig c;
  c.env = EnvKind::kMnist;
  c.samples = 60000;
  c.trials = 16;
  c.train.epochs = 1000;
  c.train.schedule = Schedule::kAlternate;
  c.train.critic_phase = 500;
  c.train.decoder_phase = 500;
  return c;
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ConfigError("bad boolean '" + std::string(text) + "' for " + std::string(key));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(12) << v;
  return s.str();
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define VIGL_INT_FIELD(name, member)                                                               \
  Field {                                                                                          \
    name, [](ExperimentConfig& c, std::string_view v) { c.member = parse_number<int>(name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                         \
  }
#define VIGL_REAL_FIELD(name, member)                                                                 \
  Field {                                                                                             \
    name, [](ExperimentConfig& c, std::string_view v) { c.member = parse_number<double>(name, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.member); }                                       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"env", [](ExperimentConfig& c, std::string_view v) { c.env = parse_env_kind(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.env)); }},
      {"mnist", [](ExperimentConfig& c, std::string_view v) { c.mnist_dir = std::string(v); },
       [](const ExperimentConfig& c) { return c.mnist_dir.string(); }},
      {"emnist",
       [](ExperimentConfig& c, std::string_view v) {
         c.emnist_dir = v.empty() ? std::nullopt : std::optional<std::filesystem::path>(std::string(v));
       },
       [](const ExperimentConfig& c) { return c.emnist_dir ? c.emnist_dir->string() : std::string(); }},
      VIGL_INT_FIELD("contexts", contexts),
      VIGL_INT_FIELD("actions", actions),
      VIGL_INT_FIELD("feedback-dim", feedback_dim),
      VIGL_REAL_FIELD("jitter", jitter),
      {"samples", [](ExperimentConfig& c, std::string_view v) { c.samples = parse_number<std::size_t>("samples", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.samples); }},
      {"noise", [](ExperimentConfig& c, std::string_view v) { c.noise.type = parse_noise_type(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.noise.type)); }},
      VIGL_REAL_FIELD("noise-level", noise.level),
      VIGL_REAL_FIELD("beta", train.beta),
      {"f1",
       [](ExperimentConfig& c, std::string_view v) { c.train.f1 = FDivergence(parse_divergence(v), c.train.f1.form()); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.f1.kind())); }},
      {"f2",
       [](ExperimentConfig& c, std::string_view v) { c.train.f2 = FDivergence(parse_divergence(v), c.train.f2.form()); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.f2.kind())); }},
      {"dv-form",
       [](ExperimentConfig& c, std::string_view v) {
         const ConjugateForm form = parse_conjugate_form(v);
         c.train.f1 = FDivergence(c.train.f1.kind(), form);
         c.train.f2 = FDivergence(c.train.f2.kind(), form);
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.f1.form())); }},
      {"input-mode", [](ExperimentConfig& c, std::string_view v) { c.train.input_mode = parse_decoder_mode(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.input_mode)); }},
      VIGL_INT_FIELD("draws", train.draws),
      VIGL_REAL_FIELD("lr", train.optimizer.learning_rate),
      VIGL_INT_FIELD("epochs", train.epochs),
      VIGL_INT_FIELD("batch", train.batch_size),
      VIGL_REAL_FIELD("ema-rate", train.ema_rate),
      {"use-ema", [](ExperimentConfig& c, std::string_view v) { c.train.use_ema = parse_bool("use-ema", v); },
       [](const ExperimentConfig& c) { return std::string(c.train.use_ema ? "1" : "0"); }},
      VIGL_REAL_FIELD("clip-norm", train.clip_norm),
      VIGL_REAL_FIELD("clamp", train.clamp),
      VIGL_REAL_FIELD("critic-bound", train.critic_bound),
      {"schedule", [](ExperimentConfig& c, std::string_view v) { c.train.schedule = parse_schedule(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.schedule)); }},
      VIGL_INT_FIELD("critic-phase", train.critic_phase),
      VIGL_INT_FIELD("decoder-phase", train.decoder_phase),
      VIGL_INT_FIELD("critic-warmup", train.critic_warmup),
      VIGL_INT_FIELD("hidden", train.shape.hidden),
      VIGL_INT_FIELD("embed", train.shape.embed),
      VIGL_INT_FIELD("head-hidden", train.shape.head_hidden),
      {"activation", [](ExperimentConfig& c, std::string_view v) { c.train.shape.activation = parse_activation(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.shape.activation)); }},
      VIGL_INT_FIELD("policy-epochs", policy.epochs),
      VIGL_INT_FIELD("policy-batch", policy.batch_size),
      VIGL_REAL_FIELD("policy-lr", policy.optimizer.learning_rate),
      VIGL_INT_FIELD("policy-hidden", policy.shape.hidden),
      VIGL_INT_FIELD("policy-embed", policy.shape.embed),
      VIGL_INT_FIELD("trials", trials),
      {"seed", [](ExperimentConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"out", [](ExperimentConfig& c, std::string_view v) { c.out = std::string(v); },
       [](const ExperimentConfig& c) { return c.out.string(); }},
      {"training-logs",
       [](ExperimentConfig& c, std::string_view v) { c.write_training_logs = parse_bool("training-logs", v); },
       [](const ExperimentConfig& c) { return std::string(c.write_training_logs ? "1" : "0"); }},
  };
  return table;
}

#undef VIGL_INT_FIELD
#undef VIGL_REAL_FIELD

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::validate() const {
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (samples < 1) throw ConfigError("samples must be positive");
  noise.validate();
  train.validate();
  if (env == EnvKind::kSynthetic) {
    if (contexts < 1 || actions < 1) throw ConfigError("synthetic env needs contexts >= 1 and actions >= 1");
    if (feedback_dim < std::max(contexts, actions) + 2) {
      throw ConfigError("feedback-dim must be at least max(contexts, actions) + 2");
    }
  } else if (mnist_dir.empty()) {
    throw ConfigError("--env mnist needs --mnist <dir>");
  }
}

void ExperimentConfig::load(std::istream& in) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    }
    set(trim(view.substr(0, eq)), trim(view.substr(eq + 1)));
  }
}

void ExperimentConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  load(in);
}

void ExperimentConfig::save(std::ostream& out) const {
  for (const Field& f : fields()) out << f.key << '=' << f.get(*this) << '\n';
}

std::uint64_t trial_seed(std::uint64_t master, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(trial)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::uint64_t stream_seed(std::uint64_t trial_seed, std::string_view stage) {
  std::vector<std::uint32_t> material{static_cast<std::uint32_t>(trial_seed),
                                      static_cast<std::uint32_t>(trial_seed >> 32)};
  for (char ch : stage) material.push_back(static_cast<unsigned char>(ch));
  std::seed_seq seq(material.begin(), material.end());
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

RunSummary summarize(std::span<const TrialResult> trials) {
  RunSummary s;
  double sum = 0.0;
  for (const TrialResult& t : trials) {
    if (!t.ok) {
      ++s.excluded;
      continue;
    }
    ++s.completed;
    sum += t.accuracy;
  }
  if (s.completed == 0) return s;
  s.mean = sum / s.completed;
  if (s.completed > 1) {
    double ss = 0.0;
    for (const TrialResult& t : trials) {
      if (t.ok) ss += (t.accuracy - s.mean) * (t.accuracy - s.mean);
    }
    s.std = std::sqrt(ss / (s.completed - 1));
    s.std_err = s.std / std::sqrt(static_cast<double>(s.completed));
  }
  return s;
}

Environment make_environment(const ExperimentConfig& config) {
  if (config.env == EnvKind::kSynthetic) {
    return make_synthetic_env(config.contexts, config.actions, config.feedback_dim, config.noise, config.jitter);
  }
  return make_mnist_env(config.mnist_dir, config.emnist_dir, config.noise);
}

TrialResult run_trial(const ExperimentConfig& config, const Environment& env, int trial,
                      std::vector<EpochStats>* history) {
  const auto start = std::chrono::steady_clock::now();
  TrialResult result;
  result.trial = trial;
  result.seed = trial_seed(config.seed, trial);

  const UniformPolicy behavior(env.num_actions());
  const Dataset data = collect(env, behavior, config.samples, stream_seed(result.seed, "collect"));

  TrainConfig train = config.train;
  train.seed = stream_seed(result.seed, "train");
  IglTrainer trainer(train, data.context_dim(), env.num_actions(), data.feedback_dim());
  std::vector<EpochStats> stats = trainer.fit(data);

  const SelectionResult selected = select_decoder(trainer.final_decoder(), data);
  const Eigen::VectorXd psi =
      selected.decoder.probability_values(data.contexts(), data.actions(), data.feedback());

  PolicyConfig policy_config = config.policy;
  policy_config.seed = stream_seed(result.seed, "policy");
  const LinearPolicy policy = train_policy(data, psi, behavior, policy_config);
  const PolicyReport report = evaluate(policy, env.test_contexts(), data, psi, behavior);

  const double n_test = static_cast<double>(env.test_contexts().labels.size());
  result.ok = true;
  result.accuracy = report.accuracy;
  result.std_err = std::sqrt(report.accuracy * (1.0 - report.accuracy) / n_test);
  result.decoded_return = report.decoded_return;
  result.behavior_decoded_return = selected.behavior_decoded_return;
  result.flipped = selected.flipped;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (history) *history = std::move(stats);
  return result;
}

namespace {

std::string run_id(const ExperimentConfig& c) {
  std::ostringstream s;
  s << to_string(c.env) << '-' << to_string(c.noise.type) << fmt(c.noise.level) << "-b" << fmt(c.train.beta) << '-'
    << to_string(c.train.f1.kind()) << '-' << to_string(c.train.f2.kind()) << '-' << to_string(c.train.input_mode)
    << "-s" << c.seed;
  return s.str();
}

void write_common(std::ostream& out, const RunResult& run) {
  const ExperimentConfig& c = run.config;
  out << run.run_id << ',' << to_string(c.env) << ',' << to_string(c.noise.type) << ',' << fmt(c.noise.level) << ','
      << fmt(c.train.beta) << ',' << to_string(c.train.f1.kind()) << ',' << to_string(c.train.f2.kind()) << ','
      << to_string(c.train.input_mode) << ',' << to_string(c.train.f1.form());
}

}  // namespace

std::string_view results_header() {
  return "row_type,run_id,env,noise,noise_level,beta,f1,f2,input_mode,dv_form,trial,seed,status,accuracy,std_err,"
         "accuracy_std,completed,excluded,decoded_return,behavior_decoded_return,flipped,seconds";
}

void write_trial_row(std::ostream& out, const RunResult& run, const TrialResult& t) {
  out << "trial,";
  write_common(out, run);
  out << ',' << t.trial << ',' << t.seed << ',' << (t.ok ? "ok" : "failed") << ',';
  if (t.ok) {
    out << fmt(t.accuracy) << ',' << fmt(t.std_err) << ",,,," << fmt(t.decoded_return) << ','
        << fmt(t.behavior_decoded_return) << ',' << (t.flipped ? 1 : 0);
  } else {
    out << ",,,,,,,";
  }
  out << ',' << fmt(t.seconds) << '\n';
}

void write_summary_row(std::ostream& out, const RunResult& run) {
  const RunSummary& s = run.summary;
  out << "summary,";
  write_common(out, run);
  out << ",," << run.config.seed << ',' << (s.completed > 0 ? "ok" : "failed") << ',' << fmt(s.mean) << ','
      << fmt(s.std_err) << ',' << fmt(s.std) << ',' << s.completed << ',' << s.excluded << ",,,,\n";
}

RunResult run(const ExperimentConfig& config) {
  config.validate();
  const Environment env = make_environment(config);
  std::filesystem::create_directories(config.out);

  RunResult result;
  result.config = config;
  result.run_id = run_id(config);

  std::ofstream trials_csv(config.out / "trials.csv");
  if (!trials_csv) throw std::runtime_error("cannot write " + (config.out / "trials.csv").string());
  trials_csv << results_header() << '\n';
  {
    std::ofstream cfg(config.out / "config.txt");
    config.save(cfg);
  }

  for (int i = 0; i < config.trials; ++i) {
    std::vector<EpochStats> history;
    TrialResult t;
    try {
      t = run_trial(config, env, i, &history);
    } catch (const NonFiniteError& e) {
      t.trial = i;
      t.seed = trial_seed(config.seed, i);
      t.ok = false;
      t.error = e.what();
      log_warning("trial " + std::to_string(i) + " failed: " + e.what());
    }
    if (config.write_training_logs && !history.empty()) {
      std::ofstream log_csv(config.out / ("trial_" + std::to_string(i) + "_training_log.csv"));
      write_training_log(log_csv, history);
    }
    write_trial_row(trials_csv, result, t);
    trials_csv.flush();
    log_info("trial " + std::to_string(i) + (t.ok ? " accuracy " + fmt(t.accuracy) : std::string(" failed")));
    result.trials.push_back(std::move(t));
  }

  result.summary = summarize(result.trials);
  write_summary_row(trials_csv, result);
  std::ofstream summary_csv(config.out / "summary.csv");
  summary_csv << results_header() << '\n';
  write_summary_row(summary_csv, result);
  return result;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "beta") return SweepAxis::kBeta;
  if (name == "noise_level" || name == "noise-level") return SweepAxis::kNoiseLevel;
  if (name == "f_pair" || name == "f-pair") return SweepAxis::kFPair;
  if (name == "input_mode" || name == "input-mode") return SweepAxis::kInputMode;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kNoiseLevel: return "noise_level";
    case SweepAxis::kFPair: return "f_pair";
    case SweepAxis::kInputMode: return "input_mode";
  }
  return "beta";
}

namespace {

void apply_axis(ExperimentConfig& c, SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::kBeta: c.set("beta", value); break;
    case SweepAxis::kNoiseLevel: c.set("noise-level", value); break;
    case SweepAxis::kInputMode: c.set("input-mode", value); break;
    case SweepAxis::kFPair: {
      const auto dash = value.find('-');
      if (dash == std::string::npos) throw ConfigError("f_pair values look like kl-kl or chi2-kl");
      c.set("f1", value.substr(0, dash));
      c.set("f2", value.substr(dash + 1));
      break;
    }
  }
}

}  // namespace

std::vector<SweepRow> sweep(const ExperimentConfig& config, SweepAxis axis, std::span<const std::string> values) {
  if (values.empty()) throw ConfigError("sweep needs at least one axis value");
  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    ExperimentConfig c = config;
    apply_axis(c, axis, value);
    c.out = config.out / (std::string(to_string(axis)) + "=" + value);
    rows.push_back({value, run(c).summary});
  }
  std::filesystem::create_directories(config.out);
  std::ofstream table(config.out / ("sweep_" + std::string(to_string(axis)) + ".csv"));
  write_sweep_table(table, axis, rows);
  return rows;
}

void write_sweep_table(std::ostream& out, SweepAxis axis, std::span<const SweepRow> rows) {
  out << to_string(axis) << ",mean_accuracy,std,std_err,completed,excluded\n";
  for (const SweepRow& r : rows) {
    out << r.value << ',' << fmt(r.summary.mean) << ',' << fmt(r.summary.std) << ',' << fmt(r.summary.std_err) << ','
        << r.summary.completed << ',' << r.summary.excluded << '\n';
  }
}

}  // namespace vigl
