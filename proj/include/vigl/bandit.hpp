#pragma once

// Offline contextual-bandit oracle: IPS-weighted per-action regression onto
// decoded rewards, followed by argmax.

#include "vigl/env.hpp"
#include "vigl/nn.hpp"
#include "vigl/trainer.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace vigl {

/// Per-action scores from a small network over the context. Acts by argmax,
/// ties going to the lowest action index.
class LinearPolicy {
 public:
  LinearPolicy(int context_dim, int num_actions, const NetShape& shape, std::mt19937_64& rng);

  int num_actions() const { return num_actions_; }
  int context_dim() const { return context_dim_; }

  Tensor scores(const Matrix& contexts) const;
  Matrix score_values(const Matrix& contexts) const;
  std::vector<int> act(const Matrix& contexts) const;
  std::vector<Tensor> parameters() const { return net_.parameters(); }

 private:
  int context_dim_;
  int num_actions_;
  TowerNet net_;
};

/// Index of the largest entry; the first one wins ties.
int argmax_row(const Eigen::Ref<const RowVector>& row);
std::vector<int> argmax_rows(const Matrix& scores);

struct PolicyConfig {
  int epochs = 50;  // full passes over the logged data
  int batch_size = 600;
  OptimizerConfig optimizer{OptimizerMethod::kAdam, 1e-3};
  std::uint64_t seed = 0;
  NetShape shape{64, 32, 0, Activation::kTanh};  // linear head over the context tower
};

/// Fits s_a(x) to the decoded reward of each logged (x, a, y), weighting rows
/// by 1 / pi_b(a | x). `psi` holds one decoded reward per logged row.
LinearPolicy train_policy(const Dataset& data, const Eigen::VectorXd& psi, const UniformPolicy& behavior,
                          const PolicyConfig& config);
LinearPolicy train_policy(const Dataset& data, const RewardDecoder& decoder, const UniformPolicy& behavior,
                          const PolicyConfig& config);

/// IPS estimate of the policy's expected decoded reward:
/// mean over rows of 1[pi(x) = a] * psi / pi_b(a | x).
double decoded_return(std::span<const int> policy_actions, const Dataset& data, const Eigen::VectorXd& psi,
                      const UniformPolicy& behavior);
double decoded_return(const LinearPolicy& policy, const Dataset& data, const Eigen::VectorXd& psi,
                      const UniformPolicy& behavior);

struct PolicyReport {
  double accuracy = 0;        // fraction of test contexts with pi(x) = label
  double decoded_return = 0;  // IPS estimate on the logged data
  double true_return = 0;     // equals accuracy in number guessing
};

/// Accuracy and true return on held-out contexts.
PolicyReport evaluate(const LinearPolicy& policy, const LabeledImages& test);
/// Also fills decoded_return from the logged data.
PolicyReport evaluate(const LinearPolicy& policy, const LabeledImages& test, const Dataset& logged,
                      const Eigen::VectorXd& psi, const UniformPolicy& behavior);

}  // namespace vigl
