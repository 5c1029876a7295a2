#pragma once

// f-divergences, their convex conjugates, and the variational lower bounds
//   D_f(P || Q) >= E_P[T] - E_Q[f*(T)]
// used to estimate (conditional) f-mutual information from samples.

#include "vigl/nn.hpp"
#include "vigl/tensor.hpp"

#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace vigl {

enum class Divergence { kKl, kChi2 };

/// Which exponential the KL bound uses. kTight is the true conjugate of
/// u log u, e^(t-1). kPaper drops the -1 and uses e^t.
enum class ConjugateForm { kTight, kPaper };

Divergence parse_divergence(std::string_view name);
std::string_view to_string(Divergence d);
ConjugateForm parse_conjugate_form(std::string_view name);  // "nwj" | "paper"
std::string_view to_string(ConjugateForm form);

class FDivergence {
 public:
  constexpr FDivergence() = default;
  constexpr explicit FDivergence(Divergence kind, ConjugateForm form = ConjugateForm::kTight)
      : kind_(kind), form_(form) {}

  static FDivergence kl(ConjugateForm form = ConjugateForm::kTight) { return FDivergence(Divergence::kKl, form); }
  static FDivergence chi2() { return FDivergence(Divergence::kChi2); }

  Divergence kind() const { return kind_; }
  ConjugateForm form() const { return form_; }

  /// f(u) for u >= 0: u log u (KL) or (u - 1)^2 (Pearson chi^2).
  double generator(double u) const;
  /// f'(u), u > 0. The Fenchel-Young equality point.
  double generator_derivative(double u) const;
  /// f*(t). Chi^2 uses the conjugate over u >= 0, which is t + t^2/4 on
  /// t >= -2 and the constant -1 below.
  double conjugate(double t) const;
  Tensor conjugate(const Tensor& t) const;

 private:
  Divergence kind_ = Divergence::kKl;
  ConjugateForm form_ = ConjugateForm::kTight;
};

double conjugate(const FDivergence& f, double t);

/// mean(on_p) - mean(f*(on_q)). Throws ContractError on an empty batch.
double variational_div_lower_bound(const FDivergence& f, std::span<const double> on_p, std::span<const double> on_q);

/// Weighted form: (sum w_p * T_p) / norm_p - (sum w_q * f*(T_q)) / norm_q.
/// Without weights it reduces to the plain means. Differentiable through the
/// critic outputs and through the weights.
Tensor variational_div_lower_bound(const FDivergence& f, const Tensor& on_p, const Tensor& on_q,
                                   const Tensor& weights_p = {}, const Tensor& weights_q = {},
                                   double norm_p = 0.0, double norm_q = 0.0);

/// Scalar-valued network with its output squashed into [-bound, bound] by
/// bound * tanh(z / bound).
class VariationalCritic {
 public:
  VariationalCritic() = default;
  VariationalCritic(TowerNet net, double bound = 10.0);

  Tensor operator()(const Tensor& features) const;
  Tensor operator()(const Matrix& features) const { return (*this)(Tensor::constant(features)); }

  double bound() const { return bound_; }
  const TowerNet& net() const { return net_; }
  std::vector<Tensor> parameters() const { return net_.parameters(); }

 private:
  TowerNet net_;
  double bound_ = 10.0;
};

/// Feature rows for one side of a bound, with optional per-row weights.
/// `normalizer` is what the weighted sum is divided by (the row count when
/// there are no weights).
struct CriticBatch {
  Matrix features;
  Tensor weights;
  double normalizer = 0.0;
};

/// Lower bound on I_f between the two halves of the joint features.
Tensor mi_loss(const FDivergence& f, const VariationalCritic& critic, const CriticBatch& joint,
               const CriticBatch& product);

/// Lower bound on I_f(Y; X,A | R): joint rows (x,a,y,r) against rows where y
/// was resampled from the empirical P(Y | R = r).
Tensor conditional_mi_loss(const FDivergence& f, const VariationalCritic& critic, const CriticBatch& joint,
                           const CriticBatch& conditional_product);

}  // namespace vigl
