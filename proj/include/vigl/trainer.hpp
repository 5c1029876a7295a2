#pragma once

// Reward-decoder training by variational min-max:
//
//   min_theta  max_G  [ E_{XAYR}[G] - E_{Y|R x XAR}[f1*(G)] ]
//           - beta * max_T [ E_{XAR}[T] - E_{XA x R}[f2*(T)] ]
//
// with R ~ Bernoulli(psi_theta). Hard Bernoulli draws only build the
// resampling pools for P(Y | R = r); the decoder gradient flows through the
// per-row weights psi_r, which enumerate both decoded rewards exactly.

#include "vigl/env.hpp"
#include "vigl/fdiv.hpp"
#include "vigl/nn.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace vigl {

enum class DecoderMode { kFeedback, kContextActionFeedback };

DecoderMode parse_decoder_mode(std::string_view name);  // "y" | "xay"
std::string_view to_string(DecoderMode mode);

enum class Schedule {
  kAlternate,     // critic phase, then decoder phase, repeated
  kSimultaneous,  // every parameter group every epoch
};

Schedule parse_schedule(std::string_view name);
std::string_view to_string(Schedule schedule);

Matrix one_hot(std::span<const int> indices, int width);

/// psi(input) in [c, 1-c], computed as c + (1 - 2c) * sigmoid(net(input)).
class RewardDecoder {
 public:
  RewardDecoder(DecoderMode mode, int context_dim, int num_actions, int feedback_dim, double clamp,
                const NetShape& shape, std::mt19937_64& rng);

  DecoderMode mode() const { return mode_; }
  double clamp() const { return clamp_; }
  int context_dim() const { return context_dim_; }
  int num_actions() const { return num_actions_; }
  int feedback_dim() const { return feedback_dim_; }
  const NetShape& shape() const { return shape_; }
  bool flipped() const { return flipped_; }
  /// The opposite decoder 1 - psi, sharing no parameters with this one.
  RewardDecoder opposite() const;

  /// Network input rows for this decoder's mode.
  Matrix inputs(const Matrix& contexts, std::span<const int> actions, const Matrix& feedback) const;
  /// Differentiable decoded probabilities, one row per input row.
  Tensor probability(const Matrix& inputs) const;
  /// Graph-free evaluation in chunks.
  Eigen::VectorXd probability_values(const Matrix& contexts, std::span<const int> actions,
                                     const Matrix& feedback) const;

  std::vector<Tensor> parameters() const { return net_.parameters(); }
  /// Parameter copy with independent storage.
  RewardDecoder clone() const;

  std::string metadata() const;
  static RewardDecoder from_metadata(std::string_view metadata);

 private:
  RewardDecoder() = default;
  DecoderMode mode_ = DecoderMode::kFeedback;
  int context_dim_ = 0;
  int num_actions_ = 0;
  int feedback_dim_ = 0;
  double clamp_ = 0.01;
  NetShape shape_;
  bool flipped_ = false;
  TowerNet net_;
};

struct TrainConfig {
  double beta = 10.0;
  FDivergence f1 = FDivergence::kl();
  FDivergence f2 = FDivergence::kl();
  int draws = 5;  // N augmented reward draws per sample
  OptimizerConfig optimizer{OptimizerMethod::kAdam, 1e-3};
  int epochs = 1000;  // one epoch = one mini-batch update
  int batch_size = 600;
  std::uint64_t seed = 0;
  double ema_rate = 0.99;
  bool use_ema = true;
  double clip_norm = 1.0;
  double clamp = 0.01;
  double critic_bound = 10.0;
  DecoderMode input_mode = DecoderMode::kFeedback;
  Schedule schedule = Schedule::kAlternate;
  int critic_phase = 1;
  int decoder_phase = 1;
  int critic_warmup = 0;  // critic-only epochs before the schedule starts
  NetShape shape;

  void validate() const;
};

struct Minibatch {
  Matrix contexts;
  std::vector<int> actions;
  Matrix feedback;

  std::size_t size() const { return actions.size(); }
  static Minibatch from(const Dataset& data, std::span<const std::size_t> rows);
};

/// Each base row with N decoded-reward draws and its decoder probability.
struct AugmentedBatch {
  Minibatch base;
  int draws = 0;
  Eigen::VectorXd psi;             // decoder probability per base row
  std::vector<std::uint8_t> rewards;  // base.size() * draws, row-major
  int reward(std::size_t row, int draw) const { return rewards[row * static_cast<std::size_t>(draws) + draw]; }
};

AugmentedBatch augment(Minibatch batch, const Eigen::VectorXd& psi, int draws, std::mt19937_64& rng);

/// Critic inputs for the four distributions the objective needs. Rows come
/// in two blocks of base.size(): decoded reward 1 first, then 0.
struct ProductBatches {
  Matrix joint_xayr;  // (x, a, y, r)          ~ P_{XAYR_psi}
  Matrix condprod;    // (x, a, y~, r), y~ ~ P_{Y|R_psi = r}
  Matrix joint_xar;   // (x, a, r)             ~ P_{XAR_psi}
  Matrix prod_xa_r;   // (x, a, r)             ~ P_{XA} x P_{R_psi}
  std::vector<int> row_reward;
  std::vector<int> resampled_from;  // base row whose y was used in condprod
  std::size_t base_rows = 0;
};

/// Throws ClassStarvationError when a decoded class has no augmented rows.
ProductBatches build_product_batches(const AugmentedBatch& aug, int num_actions, std::mt19937_64& rng);

struct ObjectiveTerms {
  Tensor cmi_bound;  // bound on I_f1(Y; X,A | R_psi)
  Tensor reg_bound;  // bound on I_f2(X,A; R_psi)
  Tensor objective;  // cmi_bound - beta * reg_bound
};

/// `psi` holds the differentiable decoder output for the base rows.
ObjectiveTerms objective_estimate(const Tensor& psi, const ProductBatches& batches, const VariationalCritic& g,
                                  const VariationalCritic& t, const FDivergence& f1, const FDivergence& f2,
                                  double beta);

struct EpochStats {
  int epoch = 0;
  double objective = 0;
  double cmi_estimate = 0;
  double reg_estimate = 0;
  double behavior_decoded_return = 0;  // mean psi over the mini-batch
  bool updated_critics = false;
  bool updated_decoder = false;
  bool skipped = false;
  double wall_seconds = 0;
};

class IglTrainer {
 public:
  IglTrainer(const TrainConfig& config, int context_dim, int num_actions, int feedback_dim);

  /// One estimate-and-update step on the given batch.
  EpochStats train_epoch(const Minibatch& batch);
  /// Runs config.epochs epochs over shuffled mini-batches of `data`.
  std::vector<EpochStats> fit(const Dataset& data, const std::function<void(const EpochStats&)>& on_epoch = {});

  /// Which parameter groups the schedule updates at a given epoch.
  std::pair<bool, bool> phase(int epoch) const;

  const TrainConfig& config() const { return config_; }
  const RewardDecoder& decoder() const { return decoder_; }
  const VariationalCritic& critic_g() const { return g_; }
  const VariationalCritic& critic_t() const { return t_; }
  Optimizer& decoder_optimizer() { return opt_theta_; }
  Optimizer& critic_g_optimizer() { return opt_g_; }
  Optimizer& critic_t_optimizer() { return opt_t_; }
  int epoch() const { return epoch_; }
  std::mt19937_64& rng() { return rng_; }

  /// Decoder with EMA shadow weights when enabled, else the live weights.
  RewardDecoder final_decoder() const;

 private:
  TrainConfig config_;
  int num_actions_;
  std::mt19937_64 rng_;
  RewardDecoder decoder_;
  VariationalCritic g_;
  VariationalCritic t_;
  Optimizer opt_theta_;
  Optimizer opt_g_;
  Optimizer opt_t_;
  EmaShadow ema_;
  int epoch_ = 0;
  std::chrono::steady_clock::time_point start_;
};

struct SelectionResult {
  RewardDecoder decoder;
  double behavior_decoded_return = 0;  // under the learned psi, before selection
  bool flipped = false;
  bool tie = false;
};

/// Keeps psi when the behavior policy's decoded return is below 0.5 and
/// switches to 1 - psi otherwise (an exact 0.5 keeps psi and logs a warning).
SelectionResult select_decoder(const RewardDecoder& decoder, const Dataset& data);

/// Training log CSV: epoch,objective,cmi_estimate,regularizer_estimate,
/// decoded_return_behavior,wall_time
void write_training_log(std::ostream& out, std::span<const EpochStats> rows);

void save_decoder(const std::filesystem::path& path, const RewardDecoder& decoder);
RewardDecoder load_decoder(const std::filesystem::path& path);
/// Decoder followed by both critics in one checkpoint file.
void save_trainer_checkpoint(const std::filesystem::path& path, const IglTrainer& trainer);

}  // namespace vigl
