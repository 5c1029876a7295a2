#include "vigl/fdiv.hpp"

#include "vigl/errors.hpp"

#include <cmath>
#include <string>

namespace vigl {

Divergence parse_divergence(std::string_view name) {
  if (name == "kl" || name == "KL") return Divergence::kKl;
  if (name == "chi2" || name == "CHI2") return Divergence::kChi2;
  throw ConfigError("unknown f-divergence '" + std::string(name) + "' (expected kl or chi2)");
}

std::string_view to_string(Divergence d) { return d == Divergence::kKl ? "kl" : "chi2"; }

ConjugateForm parse_conjugate_form(std::string_view name) {
  if (name == "nwj" || name == "tight") return ConjugateForm::kTight;
  if (name == "paper") return ConjugateForm::kPaper;
  throw ConfigError("unknown conjugate form '" + std::string(name) + "' (expected nwj or paper)");
}

std::string_view to_string(ConjugateForm form) { return form == ConjugateForm::kTight ? "nwj" : "paper"; }

double FDivergence::generator(double u) const {
  if (u < 0) throw ContractError("f-divergence generator evaluated at negative ratio");
  if (kind_ == Divergence::kKl) return u == 0.0 ? 0.0 : u * std::log(u);
  return (u - 1.0) * (u - 1.0);
}

double FDivergence::generator_derivative(double u) const {
  if (kind_ == Divergence::kKl) return std::log(u) + 1.0;
  return 2.0 * (u - 1.0);
}

double FDivergence::conjugate(double t) const {
  if (!std::isfinite(t)) throw ContractError("conjugate of a non-finite value");
  if (kind_ == Divergence::kKl) return form_ == ConjugateForm::kTight ? std::exp(t - 1.0) : std::exp(t);
  return t >= -2.0 ? t + 0.25 * t * t : -1.0;
}

Tensor FDivergence::conjugate(const Tensor& t) const {
  if (kind_ == Divergence::kKl) {
    return form_ == ConjugateForm::kTight ? exp(add_scalar(t, -1.0)) : exp(t);
  }
  return pearson_conjugate(t);
}

double conjugate(const FDivergence& f, double t) { return f.conjugate(t); }

double variational_div_lower_bound(const FDivergence& f, std::span<const double> on_p, std::span<const double> on_q) {
  if (on_p.empty() || on_q.empty()) throw ContractError("variational bound needs non-empty batches");
  double p = 0.0;
  for (double t : on_p) p += t;
  double q = 0.0;
  for (double t : on_q) q += f.conjugate(t);
  return p / static_cast<double>(on_p.size()) - q / static_cast<double>(on_q.size());
}

namespace {

Tensor weighted_mean(const Tensor& values, const Tensor& weights, double norm) {
  if (!weights.defined()) return mean(values);
  if (weights.rows() != values.rows() || weights.cols() != values.cols()) {
    throw ShapeError("variational bound: weights must match critic outputs");
  }
  if (!(norm > 0)) throw ContractError("variational bound: weighted batch needs a positive normalizer");
  return scale(sum(mul(weights, values)), 1.0 / norm);
}

}  // namespace

Tensor variational_div_lower_bound(const FDivergence& f, const Tensor& on_p, const Tensor& on_q,
                                   const Tensor& weights_p, const Tensor& weights_q, double norm_p, double norm_q) {
  if (on_p.size() == 0 || on_q.size() == 0) throw ContractError("variational bound needs non-empty batches");
  return sub(weighted_mean(on_p, weights_p, norm_p), weighted_mean(f.conjugate(on_q), weights_q, norm_q));
}

VariationalCritic::VariationalCritic(TowerNet net, double bound) : net_(std::move(net)), bound_(bound) {
  if (!(bound > 0)) throw ConfigError("critic output bound must be positive");
  if (net_.output_dim() != 1) throw ConfigError("critic network must have a scalar output");
}

Tensor VariationalCritic::operator()(const Tensor& features) const {
  return scale(tanh(scale(net_.forward(features), 1.0 / bound_)), bound_);
}

namespace {

Tensor bound_on(const FDivergence& f, const VariationalCritic& critic, const CriticBatch& p, const CriticBatch& q) {
  if (p.features.rows() == 0 || q.features.rows() == 0) throw ContractError("critic batch is empty");
  return variational_div_lower_bound(f, critic(p.features), critic(q.features), p.weights, q.weights, p.normalizer,
                                     q.normalizer);
}

}  // namespace

Tensor mi_loss(const FDivergence& f, const VariationalCritic& critic, const CriticBatch& joint,
               const CriticBatch& product) {
  return bound_on(f, critic, joint, product);
}

Tensor conditional_mi_loss(const FDivergence& f, const VariationalCritic& critic, const CriticBatch& joint,
                           const CriticBatch& conditional_product) {
  return bound_on(f, critic, joint, conditional_product);
}

}  // namespace vigl
