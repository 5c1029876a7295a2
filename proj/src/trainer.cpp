#include "vigl/trainer.hpp"

#include "vigl/errors.hpp"
#include "vigl/log.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace vigl {

DecoderMode parse_decoder_mode(std::string_view name) {
  if (name == "y" || name == "Y") return DecoderMode::kFeedback;
  if (name == "xay" || name == "XAY") return DecoderMode::kContextActionFeedback;
  throw ConfigError("unknown decoder input mode '" + std::string(name) + "' (expected y or xay)");
}

std::string_view to_string(DecoderMode mode) { return mode == DecoderMode::kFeedback ? "y" : "xay"; }

Schedule parse_schedule(std::string_view name) {
  if (name == "alternate") return Schedule::kAlternate;
  if (name == "simultaneous") return Schedule::kSimultaneous;
  throw ConfigError("unknown schedule '" + std::string(name) + "' (expected alternate or simultaneous)");
}

std::string_view to_string(Schedule schedule) {
  return schedule == Schedule::kAlternate ? "alternate" : "simultaneous";
}

Matrix one_hot(std::span<const int> indices, int width) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(indices.size()), width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= width) throw ContractError("one_hot index out of range");
    out(static_cast<Eigen::Index>(i), indices[i]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// RewardDecoder

namespace {

std::vector<Segment> decoder_segments(DecoderMode mode, int context_dim, int num_actions, int feedback_dim) {
  if (mode == DecoderMode::kFeedback) return {{feedback_dim, true}};
  return {{context_dim, true}, {num_actions, false}, {feedback_dim, true}};
}

std::map<std::string, std::string> parse_kv(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq != std::string::npos) kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const char* key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(std::string("checkpoint metadata missing ") + key, 0);
  return it->second;
}

}  // namespace

RewardDecoder::RewardDecoder(DecoderMode mode, int context_dim, int num_actions, int feedback_dim, double clamp,
                             const NetShape& shape, std::mt19937_64& rng)
    : mode_(mode),
      context_dim_(context_dim),
      num_actions_(num_actions),
      feedback_dim_(feedback_dim),
      clamp_(clamp),
      shape_(shape),
      net_(decoder_segments(mode, context_dim, num_actions, feedback_dim), 1, shape, rng) {
  if (!(clamp > 0.0 && clamp < 0.5)) throw ConfigError("decoder clamp c must lie in (0, 0.5)");
}

RewardDecoder RewardDecoder::clone() const {
  std::mt19937_64 scratch(0);
  RewardDecoder out(mode_, context_dim_, num_actions_, feedback_dim_, clamp_, shape_, scratch);
  out.flipped_ = flipped_;
  restore(out.net_.parameters(), snapshot(net_.parameters()));
  return out;
}

RewardDecoder RewardDecoder::opposite() const {
  RewardDecoder out = clone();
  out.flipped_ = !flipped_;
  return out;
}

Matrix RewardDecoder::inputs(const Matrix& contexts, std::span<const int> actions, const Matrix& feedback) const {
  if (feedback.cols() != feedback_dim_) throw ShapeError("decoder: feedback width mismatch");
  if (mode_ == DecoderMode::kFeedback) return feedback;
  if (contexts.cols() != context_dim_) throw ShapeError("decoder: context width mismatch");
  if (contexts.rows() != feedback.rows() || static_cast<Eigen::Index>(actions.size()) != feedback.rows()) {
    throw ShapeError("decoder: row counts differ");
  }
  Matrix out(feedback.rows(), context_dim_ + num_actions_ + feedback_dim_);
  out.leftCols(context_dim_) = contexts;
  out.middleCols(context_dim_, num_actions_) = one_hot(actions, num_actions_);
  out.rightCols(feedback_dim_) = feedback;
  return out;
}

Tensor RewardDecoder::probability(const Matrix& inputs) const {
  const Tensor s = sigmoid(net_.forward(Tensor::constant(inputs)));
  const double span = 1.0 - 2.0 * clamp_;
  return flipped_ ? affine(s, -span, 1.0 - clamp_) : affine(s, span, clamp_);
}

Eigen::VectorXd RewardDecoder::probability_values(const Matrix& contexts, std::span<const int> actions,
                                                  const Matrix& feedback) const {
  NoGradGuard guard;
  constexpr Eigen::Index kChunk = 4096;
  const Eigen::Index n = feedback.rows();
  Eigen::VectorXd out(n);
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    Matrix ctx = mode_ == DecoderMode::kFeedback ? Matrix() : Matrix(contexts.middleRows(start, len));
    const auto act = mode_ == DecoderMode::kFeedback ? std::span<const int>()
                                                     : actions.subspan(static_cast<std::size_t>(start),
                                                                       static_cast<std::size_t>(len));
    const Matrix in = inputs(ctx, act, feedback.middleRows(start, len));
    out.segment(start, len) = probability(in).value().col(0);
  }
  return out;
}

std::string RewardDecoder::metadata() const {
  std::ostringstream m;
  m << "kind=decoder mode=" << to_string(mode_) << " context_dim=" << context_dim_ << " num_actions=" << num_actions_
    << " feedback_dim=" << feedback_dim_ << " clamp=" << clamp_ << " hidden=" << shape_.hidden
    << " embed=" << shape_.embed << " head_hidden=" << shape_.head_hidden
    << " activation=" << to_string(shape_.activation) << " flipped=" << (flipped_ ? 1 : 0);
  return m.str();
}

RewardDecoder RewardDecoder::from_metadata(std::string_view metadata) {
  const auto kv = parse_kv(metadata);
  NetShape shape;
  shape.hidden = std::stoi(need(kv, "hidden"));
  shape.embed = std::stoi(need(kv, "embed"));
  shape.head_hidden = std::stoi(need(kv, "head_hidden"));
  shape.activation = parse_activation(need(kv, "activation"));
  std::mt19937_64 scratch(0);
  RewardDecoder d(parse_decoder_mode(need(kv, "mode")), std::stoi(need(kv, "context_dim")),
                  std::stoi(need(kv, "num_actions")), std::stoi(need(kv, "feedback_dim")),
                  std::stod(need(kv, "clamp")), shape, scratch);
  d.flipped_ = need(kv, "flipped") == "1";
  return d;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (draws < 1) throw ConfigError("augmentation count N must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(ema_rate >= 0.0 && ema_rate < 1.0)) throw ConfigError("EMA rate must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(clamp > 0.0 && clamp < 0.5)) throw ConfigError("decoder clamp c must lie in (0, 0.5)");
  if (!(critic_bound > 0.0)) throw ConfigError("critic bound must be positive");
  if (critic_phase < 1 || decoder_phase < 1) throw ConfigError("phase lengths must be positive");
  if (critic_warmup < 0) throw ConfigError("critic warm-up must be non-negative");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

Minibatch Minibatch::from(const Dataset& data, std::span<const std::size_t> rows) {
  Minibatch b;
  b.contexts.resize(static_cast<Eigen::Index>(rows.size()), data.context_dim());
  b.feedback.resize(static_cast<Eigen::Index>(rows.size()), data.feedback_dim());
  b.actions.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(rows[i]);
    b.contexts.row(static_cast<Eigen::Index>(i)) = data.contexts().row(src);
    b.feedback.row(static_cast<Eigen::Index>(i)) = data.feedback().row(src);
    b.actions[i] = data.actions()[rows[i]];
  }
  return b;
}

AugmentedBatch augment(Minibatch batch, const Eigen::VectorXd& psi, int draws, std::mt19937_64& rng) {
  if (draws < 1) throw ContractError("augment needs N >= 1");
  if (psi.size() != static_cast<Eigen::Index>(batch.size())) throw ShapeError("augment: one psi per row required");
  AugmentedBatch aug;
  aug.draws = draws;
  aug.psi = psi;
  aug.rewards.resize(batch.size() * static_cast<std::size_t>(draws));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (int j = 0; j < draws; ++j) {
      aug.rewards[k * static_cast<std::size_t>(draws) + j] = u(rng) < psi(static_cast<Eigen::Index>(k)) ? 1 : 0;
    }
  }
  aug.base = std::move(batch);
  return aug;
}

ProductBatches build_product_batches(const AugmentedBatch& aug, int num_actions, std::mt19937_64& rng) {
  const std::size_t m = aug.base.size();
  if (m == 0) throw ContractError("build_product_batches: empty batch");
  // Resampling pools: one entry per augmented row with that decoded reward.
  std::vector<int> pool[2];
  for (std::size_t k = 0; k < m; ++k) {
    for (int j = 0; j < aug.draws; ++j) pool[aug.reward(k, j)].push_back(static_cast<int>(k));
  }
  for (int r : {1, 0}) {
    if (pool[r].empty()) throw ClassStarvationError(r);
  }

  const Eigen::Index xd = aug.base.contexts.cols();
  const Eigen::Index yd = aug.base.feedback.cols();
  const Eigen::Index rows = static_cast<Eigen::Index>(2 * m);
  const Matrix actions = one_hot(aug.base.actions, num_actions);

  ProductBatches out;
  out.base_rows = m;
  out.joint_xayr.resize(rows, xd + num_actions + yd + 1);
  out.condprod.resize(rows, xd + num_actions + yd + 1);
  out.joint_xar.resize(rows, xd + num_actions + 1);
  out.row_reward.resize(static_cast<std::size_t>(rows));
  out.resampled_from.resize(static_cast<std::size_t>(rows));

  for (int block = 0; block < 2; ++block) {
    const int r = block == 0 ? 1 : 0;
    std::uniform_int_distribution<std::size_t> pick(0, pool[r].size() - 1);
    for (std::size_t k = 0; k < m; ++k) {
      const auto row = static_cast<Eigen::Index>(block * m + k);
      const auto src = static_cast<Eigen::Index>(k);
      const int other = pool[r][pick(rng)];
      out.row_reward[static_cast<std::size_t>(row)] = r;
      out.resampled_from[static_cast<std::size_t>(row)] = other;

      out.joint_xayr.row(row) << aug.base.contexts.row(src), actions.row(src), aug.base.feedback.row(src),
          static_cast<double>(r);
      out.condprod.row(row) << aug.base.contexts.row(src), actions.row(src), aug.base.feedback.row(other),
          static_cast<double>(r);
      out.joint_xar.row(row) << aug.base.contexts.row(src), actions.row(src), static_cast<double>(r);
    }
  }
  // Same (x, a, r) rows; they differ from joint_xar only in their weights
  // (p_hat(r) instead of psi_r(row)), applied in objective_estimate.
  out.prod_xa_r = out.joint_xar;
  return out;
}

ObjectiveTerms objective_estimate(const Tensor& psi, const ProductBatches& batches, const VariationalCritic& g,
                                  const VariationalCritic& t, const FDivergence& f1, const FDivergence& f2,
                                  double beta) {
  const auto m = static_cast<Eigen::Index>(batches.base_rows);
  if (psi.rows() != m || psi.cols() != 1) throw ShapeError("objective_estimate: psi must be base_rows x 1");
  const double norm = static_cast<double>(m);

  const Tensor psi_blocks[] = {psi, affine(psi, -1.0, 1.0)};
  const Tensor w_joint = concat_rows(psi_blocks);
  const Tensor p1 = mean(psi);
  const Tensor marginal_blocks[] = {broadcast_column(p1, m), broadcast_column(affine(p1, -1.0, 1.0), m)};
  const Tensor w_marginal = concat_rows(marginal_blocks);

  ObjectiveTerms out;
  out.cmi_bound = conditional_mi_loss(f1, g, {batches.joint_xayr, w_joint, norm}, {batches.condprod, w_joint, norm});
  // joint_xar and prod_xa_r hold the same rows, so T is evaluated once and
  // only the weights tell the two distributions apart.
  const Tensor t_out = t(batches.joint_xar);
  out.reg_bound = variational_div_lower_bound(f2, t_out, t_out, w_joint, w_marginal, norm, norm);
  out.objective = sub(out.cmi_bound, scale(out.reg_bound, beta));
  return out;
}

// ---------------------------------------------------------------------------
// IglTrainer

namespace {

TowerNet critic_net(bool with_feedback, int context_dim, int num_actions, int feedback_dim, const NetShape& shape,
                    std::mt19937_64& rng) {
  std::vector<Segment> segs{{context_dim, true}, {num_actions, false}};
  if (with_feedback) segs.push_back({feedback_dim, true});
  segs.push_back({1, false});
  return TowerNet(std::move(segs), 1, shape, rng);
}

const TrainConfig& validated(const TrainConfig& c) {
  c.validate();
  return c;
}

std::vector<Tensor> joined(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  std::vector<Tensor> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

bool all_finite(std::span<const Tensor> params) {
  for (const Tensor& p : params) {
    if (p.has_grad() && !p.grad().allFinite()) return false;
  }
  return true;
}

}  // namespace

// Members are built in declaration order from rng_, so the seed pins every
// initial weight: decoder, then G, then T.
IglTrainer::IglTrainer(const TrainConfig& config, int context_dim, int num_actions, int feedback_dim)
    : config_(validated(config)),
      num_actions_(num_actions),
      rng_(config.seed),
      decoder_(config.input_mode, context_dim, num_actions, feedback_dim, config.clamp, config.shape, rng_),
      g_(critic_net(true, context_dim, num_actions, feedback_dim, config.shape, rng_), config.critic_bound),
      t_(critic_net(false, context_dim, num_actions, feedback_dim, config.shape, rng_), config.critic_bound),
      opt_theta_(config.optimizer, decoder_.parameters()),
      opt_g_(config.optimizer, g_.parameters()),
      opt_t_(config.optimizer, t_.parameters()),
      ema_(decoder_.parameters(), config.ema_rate),
      start_(std::chrono::steady_clock::now()) {}

std::pair<bool, bool> IglTrainer::phase(int epoch) const {
  if (epoch < config_.critic_warmup) return {true, false};
  epoch -= config_.critic_warmup;
  if (config_.schedule == Schedule::kSimultaneous) return {true, true};
  const int period = config_.critic_phase + config_.decoder_phase;
  const bool critics = epoch % period < config_.critic_phase;
  return {critics, !critics};
}

EpochStats IglTrainer::train_epoch(const Minibatch& batch) {
  EpochStats stats;
  stats.epoch = epoch_;
  const auto [do_critics, do_decoder] = phase(epoch_);
  ++epoch_;

  const Eigen::VectorXd psi_values = decoder_.probability_values(batch.contexts, batch.actions, batch.feedback);
  stats.behavior_decoded_return = psi_values.mean();

  std::optional<ProductBatches> batches;
  for (int attempt = 0; attempt < 2 && !batches; ++attempt) {
    try {
      batches = build_product_batches(augment(batch, psi_values, config_.draws, rng_), num_actions_, rng_);
    } catch (const ClassStarvationError& e) {
      if (attempt == 1) {
        log_warning(std::string("epoch ") + std::to_string(stats.epoch) + ": " + e.what() + ", skipping update");
      }
    }
  }
  if (!batches) {
    stats.skipped = true;
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return stats;
  }

  auto theta = decoder_.parameters();
  const auto omega1 = g_.parameters();
  const auto omega2 = t_.parameters();

  const Tensor psi = decoder_.probability(decoder_.inputs(batch.contexts, batch.actions, batch.feedback));
  const ObjectiveTerms terms = objective_estimate(psi, *batches, g_, t_, config_.f1, config_.f2, config_.beta);
  stats.objective = terms.objective.item();
  stats.cmi_estimate = terms.cmi_bound.item();
  stats.reg_estimate = terms.reg_bound.item();
  if (!std::isfinite(stats.objective)) {
    throw NonFiniteError("objective became non-finite at epoch " + std::to_string(stats.epoch));
  }

  // The two bounds are backpropagated separately: each critic ascends its own
  // bound, and theta descends cmi - beta * reg. This keeps beta = 0 working
  // for T, which would otherwise receive no gradient.
  opt_theta_.zero_grad();
  opt_g_.zero_grad();
  opt_t_.zero_grad();
  backward(terms.cmi_bound);
  std::vector<Matrix> theta_cmi;
  theta_cmi.reserve(theta.size());
  for (const Tensor& p : theta) theta_cmi.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));
  for (Tensor& p : theta) p.zero_grad();
  backward(terms.reg_bound);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    Matrix reg = theta[i].has_grad() ? theta[i].grad() : Matrix::Zero(theta[i].rows(), theta[i].cols());
    theta[i].mutable_grad() = theta_cmi[i] - config_.beta * reg;
  }

  if (!all_finite(theta) || !all_finite(omega1) || !all_finite(omega2)) {
    throw NonFiniteError("non-finite gradient at epoch " + std::to_string(stats.epoch));
  }

  if (do_critics) {
    clip_grad_norm(omega1, config_.clip_norm);
    clip_grad_norm(omega2, config_.clip_norm);
    opt_g_.step(Direction::kAscent);
    opt_t_.step(Direction::kAscent);
    stats.updated_critics = true;
  }
  if (do_decoder) {
    clip_grad_norm(theta, config_.clip_norm);
    opt_theta_.step(Direction::kDescent);
    ema_.update(theta);
    stats.updated_decoder = true;
  }
  stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return stats;
}

std::vector<EpochStats> IglTrainer::fit(const Dataset& data, const std::function<void(const EpochStats&)>& on_epoch) {
  if (data.size() == 0) throw ContractError("fit: empty dataset");
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<EpochStats> history;
  history.reserve(static_cast<std::size_t>(config_.epochs));
  for (int e = 0; e < config_.epochs; ++e) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng_);
      cursor = 0;
    }
    const Minibatch mb = Minibatch::from(data, std::span(order).subspan(cursor, batch));
    cursor += batch;
    history.push_back(train_epoch(mb));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

RewardDecoder IglTrainer::final_decoder() const {
  RewardDecoder out = decoder_.clone();
  if (config_.use_ema) restore(out.parameters(), ema_.values());
  return out;
}

// ---------------------------------------------------------------------------

SelectionResult select_decoder(const RewardDecoder& decoder, const Dataset& data) {
  if (data.size() == 0) throw ContractError("select_decoder: empty dataset");
  SelectionResult out{decoder.clone()};
  out.behavior_decoded_return =
      decoder.probability_values(data.contexts(), data.actions(), data.feedback()).mean();
  if (out.behavior_decoded_return == 0.5) {
    out.tie = true;
    log_warning("decoded return of the behavior policy is exactly 0.5; keeping psi");
  } else if (out.behavior_decoded_return > 0.5) {
    out.decoder = decoder.opposite();
    out.flipped = true;
  }
  return out;
}

void write_training_log(std::ostream& out, std::span<const EpochStats> rows) {
  out << "epoch,objective,cmi_estimate,regularizer_estimate,decoded_return_behavior,wall_time\n";
  out.precision(10);
  for (const EpochStats& s : rows) {
    out << s.epoch << ',' << s.objective << ',' << s.cmi_estimate << ',' << s.reg_estimate << ','
        << s.behavior_decoded_return << ',' << s.wall_seconds << '\n';
  }
}

void save_decoder(const std::filesystem::path& path, const RewardDecoder& decoder) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto values = snapshot(decoder.parameters());
  write_checkpoint(out, decoder.metadata(), values);
}

RewardDecoder load_decoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const Checkpoint ckpt = read_checkpoint(in);
  RewardDecoder decoder = RewardDecoder::from_metadata(ckpt.metadata);
  const auto params = decoder.parameters();
  if (ckpt.tensors.size() < params.size()) throw FormatError("decoder checkpoint has too few tensors", 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ckpt.tensors[i].rows() != params[i].rows() || ckpt.tensors[i].cols() != params[i].cols()) {
      throw FormatError("decoder checkpoint tensor " + std::to_string(i) + " has the wrong shape", 0);
    }
  }
  restore(params, std::span(ckpt.tensors).first(params.size()));
  return decoder;
}

void save_trainer_checkpoint(const std::filesystem::path& path, const IglTrainer& trainer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const RewardDecoder decoder = trainer.final_decoder();
  const auto params = joined(joined(decoder.parameters(), trainer.critic_g().parameters()),
                             trainer.critic_t().parameters());
  std::ostringstream meta;
  meta << decoder.metadata() << " epoch=" << trainer.epoch() << " beta=" << trainer.config().beta
       << " f1=" << to_string(trainer.config().f1.kind()) << " f2=" << to_string(trainer.config().f2.kind());
  write_checkpoint(out, meta.str(), snapshot(params));
}

}  // namespace vigl
