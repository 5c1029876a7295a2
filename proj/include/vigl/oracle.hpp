#pragma once

// Exact information quantities on small enumerable instances, computed by
// direct summation over probability tables. This is the ground truth the
// sampled estimators and trained components are checked against.

#include "vigl/fdiv.hpp"
#include "vigl/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace vigl::oracle {

/// p(x, a, r, y) over finite index sets; r is the true binary reward.
class DiscreteJoint {
 public:
  DiscreteJoint(int num_contexts, int num_actions, int num_feedback);
  /// Takes ownership of a flat table in (x, a, r, y) row-major order.
  DiscreteJoint(int num_contexts, int num_actions, int num_feedback, std::vector<double> table);

  int num_contexts() const { return nx_; }
  int num_actions() const { return na_; }
  int num_feedback() const { return ny_; }
  std::size_t cells() const { return p_.size(); }

  double& at(int x, int a, int r, int y) { return p_[index(x, a, r, y)]; }
  double at(int x, int a, int r, int y) const { return p_[index(x, a, r, y)]; }
  std::span<const double> table() const { return p_; }

  double total() const;
  /// Throws ContractError on negative entries or total off 1 by > 1e-12.
  void validate() const;

  /// p(y) restricted to y with positive mass, in increasing order.
  std::vector<int> feedback_support() const;
  /// (x, a, y) triples with positive mass, as flat (x * na + a) * ny + y ids.
  std::vector<int> xay_support() const;

 private:
  std::size_t index(int x, int a, int r, int y) const {
    return ((static_cast<std::size_t>(x) * na_ + a) * 2 + r) * ny_ + y;
  }
  int nx_, na_, ny_;
  std::vector<double> p_;
};

enum class DecoderInput { kFeedback, kContextActionFeedback };

/// psi(input) for every enumerable input. Feedback mode indexes by y;
/// context-action-feedback mode by (x * na + a) * ny + y.
struct DecoderTable {
  DecoderInput input = DecoderInput::kFeedback;
  int num_actions = 0;
  int num_feedback = 0;
  std::vector<double> psi;

  double operator()(int x, int a, int y) const {
    return input == DecoderInput::kFeedback ? psi[static_cast<std::size_t>(y)]
                                            : psi[(static_cast<std::size_t>(x) * num_actions + a) * num_feedback + y];
  }
  DecoderTable flipped() const;
  static DecoderTable constant(const DiscreteJoint& joint, DecoderInput input, double value);
};

/// A three-way table p(z1, z2, z3) stored as one z1 x z2 matrix per z3.
using Table3 = std::vector<Matrix>;

/// D_f(P || Q) for explicit distributions, with 0 * f(0/0) := 0.
double exact_f_divergence(std::span<const double> p, std::span<const double> q, const FDivergence& f);

/// I_f(Z1; Z2) = D_f(P_{Z1 Z2} || P_{Z1} x P_{Z2}) for a z1 x z2 joint table.
double exact_f_mi(const Matrix& joint, const FDivergence& f);

/// E_{Z3}[ I_f(Z1; Z2 | Z3 = z3) ]. Zero-mass slices contribute 0.
double exact_f_cmi(const Table3& joint, const FDivergence& f);

/// Shannon-entropy route to the KL conditional MI: H(Z1|Z3) - H(Z1|Z2,Z3).
double cmi_via_entropies(const Table3& joint);

/// The joint extended with R_psi ~ Bernoulli(psi) and marginalized over the
/// true reward: q(x, a, y, rpsi), indexed [rpsi](x * na + a, y).
Table3 decoded_joint(const DiscreteJoint& joint, const DecoderTable& decoder);

/// Information terms of the decoded joint, all in the KL sense unless noted.
struct DecodedTerms {
  double cmi_y_xa_given_r = 0;  // I(Y; X,A | R_psi)
  double mi_xa_r = 0;           // I(X,A; R_psi)
  double cmi_y_r_given_xa = 0;  // I(Y; R_psi | X,A)
  double mi_y_r = 0;            // I(Y; R_psi)
  double mi_y_xa = 0;           // I(Y; X,A)
};
DecodedTerms decoded_terms(const DiscreteJoint& joint, const DecoderTable& decoder,
                           const FDivergence& f = FDivergence::kl());

/// I(Y; R) under the true latent reward.
double true_feedback_reward_mi(const DiscreteJoint& joint);

/// I_f1(Y; X,A | R_psi) - beta * I_f2(X,A; R_psi), computed analytically.
double exact_objective(const DiscreteJoint& joint, const DecoderTable& decoder, double beta,
                       const FDivergence& f1 = FDivergence::kl(), const FDivergence& f2 = FDivergence::kl());

/// Exact distribution targeted by the conditional-product construction:
/// P_{Y|R_psi} x P_{X A R_psi}, indexed like decoded_joint.
Table3 conditional_product(const DiscreteJoint& joint, const DecoderTable& decoder);

struct GridResult {
  DecoderTable best;
  double value = 0;
  double cmi = 0;  // I(Y; X,A | R_psi) at `best`, KL
  /// Every table whose objective is within tolerance of the minimum.
  std::vector<DecoderTable> minimizers;
  std::vector<double> minimizer_cmi;
  std::size_t evaluated = 0;
};

struct GridOptions {
  int resolution = 9;
  double clamp = 0.01;  // grid spans [clamp, 1 - clamp]
  double tie_tolerance = 1e-12;
  std::size_t max_tables = 1'000'000;
  FDivergence f1 = FDivergence::kl();
  FDivergence f2 = FDivergence::kl();
};

/// Exhaustive search over decoder tables whose entries on the joint's support
/// lie on an evenly spaced grid. Off-support entries are fixed at 0.5.
GridResult grid_minimize_objective(const DiscreteJoint& joint, double beta, DecoderInput input,
                                   const GridOptions& options = {});

/// Exact value of a deterministic policy under a decoder: sum over x of
/// p(x) * E[psi | x, a = action_of[x]], with p(y | x, a) taken from the joint.
double exact_policy_decoded_return(const DiscreteJoint& joint, const DecoderTable& decoder,
                                   std::span<const int> action_of);
/// True return of a deterministic policy: P(r = 1) under a = action_of[x].
double exact_policy_true_return(const DiscreteJoint& joint, std::span<const int> action_of);

// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

/// Compares an analytic gradient with central differences coordinate by
/// coordinate. Error per coordinate is |g - n| / max(|g|, |n|, 1e-2), i.e. a
/// relative error that becomes absolute below magnitude 1e-2 (1e-4 relative
/// equals 1e-6 absolute there). Throws NonFiniteError on non-finite values.
GradCheckResult finite_diff_gradcheck(const std::function<double(std::span<const double>)>& value,
                                      std::span<const double> analytic_gradient, std::span<const double> point,
                                      double step = 1e-5);

/// Gradcheck of a tensor loss with respect to parameter tensors. `loss`
/// rebuilds the graph from the current parameter values on every call.
GradCheckResult gradcheck_parameters(std::span<const Tensor> params, const std::function<Tensor()>& loss,
                                     double step = 1e-5);

}  // namespace vigl::oracle
