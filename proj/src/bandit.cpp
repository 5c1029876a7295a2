#include "vigl/bandit.hpp"

#include "vigl/errors.hpp"

#include <algorithm>
#include <numeric>

namespace vigl {

LinearPolicy::LinearPolicy(int context_dim, int num_actions, const NetShape& shape, std::mt19937_64& rng)
    : context_dim_(context_dim),
      num_actions_(num_actions),
      net_({{context_dim, true}}, num_actions, shape, rng) {
  if (num_actions < 1) throw ConfigError("policy needs at least one action");
}

Tensor LinearPolicy::scores(const Matrix& contexts) const { return net_.forward(Tensor::constant(contexts)); }

Matrix LinearPolicy::score_values(const Matrix& contexts) const {
  NoGradGuard guard;
  return scores(contexts).value();
}

std::vector<int> LinearPolicy::act(const Matrix& contexts) const { return argmax_rows(score_values(contexts)); }

int argmax_row(const Eigen::Ref<const RowVector>& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j) {
    if (row(j) > row(best)) best = static_cast<int>(j);
  }
  return best;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(scores.row(i));
  return out;
}

namespace {

std::vector<double> propensity_weights(const Dataset& data, const UniformPolicy& behavior) {
  std::vector<double> w(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = behavior.probability(data.actions()[i]);
    if (!(p > 0.0)) throw ContractError("logged action has zero propensity under the behavior policy");
    w[i] = 1.0 / p;
  }
  return w;
}

}  // namespace

LinearPolicy train_policy(const Dataset& data, const Eigen::VectorXd& psi, const UniformPolicy& behavior,
                          const PolicyConfig& config) {
  if (data.size() == 0) throw ContractError("train_policy: empty dataset");
  if (psi.size() != static_cast<Eigen::Index>(data.size())) throw ShapeError("train_policy: one psi per row");
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("invalid policy training budget");
  const std::vector<double> weights = propensity_weights(data, behavior);

  std::mt19937_64 rng(config.seed);
  LinearPolicy policy(data.context_dim(), behavior.num_actions(), config.shape, rng);
  Optimizer opt(config.optimizer, policy.parameters());

  const std::size_t n = data.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      Matrix x(static_cast<Eigen::Index>(len), data.context_dim());
      Matrix target(static_cast<Eigen::Index>(len), 1);
      Matrix w(static_cast<Eigen::Index>(len), 1);
      std::vector<int> actions(len);
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t row = order[start + k];
        x.row(static_cast<Eigen::Index>(k)) = data.contexts().row(static_cast<Eigen::Index>(row));
        target(static_cast<Eigen::Index>(k), 0) = psi(static_cast<Eigen::Index>(row));
        w(static_cast<Eigen::Index>(k), 0) = weights[row];
        actions[k] = data.actions()[row];
      }
      const Tensor chosen = pick(policy.scores(x), actions);
      const Tensor err = square(sub(chosen, Tensor::constant(target)));
      const Tensor loss = scale(sum(mul(err, Tensor::constant(w))), 1.0 / static_cast<double>(len));
      opt.zero_grad();
      backward(loss);
      opt.step(Direction::kDescent);
    }
  }
  return policy;
}

LinearPolicy train_policy(const Dataset& data, const RewardDecoder& decoder, const UniformPolicy& behavior,
                          const PolicyConfig& config) {
  return train_policy(data, decoder.probability_values(data.contexts(), data.actions(), data.feedback()), behavior,
                      config);
}

double decoded_return(std::span<const int> policy_actions, const Dataset& data, const Eigen::VectorXd& psi,
                      const UniformPolicy& behavior) {
  if (policy_actions.size() != data.size() || psi.size() != static_cast<Eigen::Index>(data.size())) {
    throw ShapeError("decoded_return: one action and one psi per logged row");
  }
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int a = data.actions()[i];
    if (policy_actions[i] != a) continue;
    total += psi(static_cast<Eigen::Index>(i)) / behavior.probability(a);
  }
  return total / static_cast<double>(data.size());
}

double decoded_return(const LinearPolicy& policy, const Dataset& data, const Eigen::VectorXd& psi,
                      const UniformPolicy& behavior) {
  return decoded_return(policy.act(data.contexts()), data, psi, behavior);
}

PolicyReport evaluate(const LinearPolicy& policy, const LabeledImages& test) {
  PolicyReport report;
  if (test.labels.empty()) return report;
  const std::vector<int> actions = policy.act(test.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) hits += actions[i] == test.labels[i] ? 1 : 0;
  report.accuracy = static_cast<double>(hits) / static_cast<double>(actions.size());
  report.true_return = report.accuracy;
  return report;
}

PolicyReport evaluate(const LinearPolicy& policy, const LabeledImages& test, const Dataset& logged,
                      const Eigen::VectorXd& psi, const UniformPolicy& behavior) {
  PolicyReport report = evaluate(policy, test);
  report.decoded_return = decoded_return(policy, logged, psi, behavior);
  return report;
}

}  // namespace vigl
