#include "vigl/oracle.hpp"

#include "vigl/errors.hpp"
#include "vigl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vigl::oracle {

namespace {

constexpr std::size_t kKahanThreshold = 10'000;

/// Plain summation for small tables, compensated summation for large ones.
class Accumulator {
 public:
  explicit Accumulator(std::size_t expected_terms) : kahan_(expected_terms > kKahanThreshold) {}
  void add(double v) {
    if (!kahan_) {
      sum_ += v;
      return;
    }
    const double y = v - comp_;
    const double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  bool kahan_;
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double xlogy_ratio(double p, double q) { return p == 0.0 ? 0.0 : p * std::log(p / q); }

}  // namespace

DiscreteJoint::DiscreteJoint(int num_contexts, int num_actions, int num_feedback)
    : DiscreteJoint(num_contexts, num_actions, num_feedback,
                    std::vector<double>(static_cast<std::size_t>(std::max(num_contexts, 0)) *
                                            std::max(num_actions, 0) * 2 * std::max(num_feedback, 0),
                                        0.0)) {}

DiscreteJoint::DiscreteJoint(int num_contexts, int num_actions, int num_feedback, std::vector<double> table)
    : nx_(num_contexts), na_(num_actions), ny_(num_feedback), p_(std::move(table)) {
  if (nx_ < 1 || na_ < 1 || ny_ < 1) throw ContractError("DiscreteJoint dimensions must be positive");
  if (p_.size() != static_cast<std::size_t>(nx_) * na_ * 2 * ny_) throw ShapeError("DiscreteJoint table size mismatch");
}

double DiscreteJoint::total() const {
  Accumulator acc(p_.size());
  for (double v : p_) acc.add(v);
  return acc.value();
}

void DiscreteJoint::validate() const {
  for (double v : p_) {
    if (!(v >= 0.0)) throw ContractError("DiscreteJoint has a negative or NaN entry");
  }
  const double t = total();
  if (std::abs(t - 1.0) > 1e-12) throw ContractError("DiscreteJoint sums to " + std::to_string(t));
}

std::vector<int> DiscreteJoint::feedback_support() const {
  std::vector<int> out;
  for (int y = 0; y < ny_; ++y) {
    double m = 0.0;
    for (int x = 0; x < nx_; ++x)
      for (int a = 0; a < na_; ++a)
        for (int r = 0; r < 2; ++r) m += at(x, a, r, y);
    if (m > 0.0) out.push_back(y);
  }
  return out;
}

std::vector<int> DiscreteJoint::xay_support() const {
  std::vector<int> out;
  for (int x = 0; x < nx_; ++x)
    for (int a = 0; a < na_; ++a)
      for (int y = 0; y < ny_; ++y) {
        if (at(x, a, 0, y) + at(x, a, 1, y) > 0.0) out.push_back((x * na_ + a) * ny_ + y);
      }
  return out;
}

DecoderTable DecoderTable::flipped() const {
  DecoderTable out = *this;
  for (double& v : out.psi) v = 1.0 - v;
  return out;
}

DecoderTable DecoderTable::constant(const DiscreteJoint& joint, DecoderInput input, double value) {
  DecoderTable t;
  t.input = input;
  t.num_actions = joint.num_actions();
  t.num_feedback = joint.num_feedback();
  const std::size_t n = input == DecoderInput::kFeedback
                            ? static_cast<std::size_t>(joint.num_feedback())
                            : static_cast<std::size_t>(joint.num_contexts()) * joint.num_actions() * joint.num_feedback();
  t.psi.assign(n, value);
  return t;
}

double exact_f_divergence(std::span<const double> p, std::span<const double> q, const FDivergence& f) {
  if (p.size() != q.size()) throw ShapeError("exact_f_divergence: distributions differ in size");
  Accumulator acc(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] == 0.0) {
      if (p[i] == 0.0) continue;
      return std::numeric_limits<double>::infinity();
    }
    if (f.kind() == Divergence::kKl) {
      acc.add(xlogy_ratio(p[i], q[i]));
    } else {
      const double d = p[i] - q[i];
      acc.add(d * d / q[i]);
    }
  }
  return acc.value();
}

double exact_f_mi(const Matrix& joint, const FDivergence& f) {
  const double total = joint.sum();
  if (!(total > 0.0)) return 0.0;
  const Eigen::VectorXd row = joint.rowwise().sum() / total;
  const RowVector col = joint.colwise().sum() / total;
  Accumulator acc(static_cast<std::size_t>(joint.size()));
  for (Eigen::Index i = 0; i < joint.rows(); ++i) {
    for (Eigen::Index j = 0; j < joint.cols(); ++j) {
      const double p = joint(i, j) / total;
      const double q = row(i) * col(j);
      if (q == 0.0) continue;  // p is 0 too: marginals dominate the joint
      if (f.kind() == Divergence::kKl) {
        acc.add(xlogy_ratio(p, q));
      } else {
        const double d = p - q;
        acc.add(d * d / q);
      }
    }
  }
  return acc.value();
}

double exact_f_cmi(const Table3& joint, const FDivergence& f) {
  double total = 0.0;
  for (const auto& slice : joint) total += slice.sum();
  if (!(total > 0.0)) return 0.0;
  double out = 0.0;
  for (const auto& slice : joint) {
    const double mass = slice.sum();
    if (mass == 0.0) continue;
    out += (mass / total) * exact_f_mi(slice, f);
  }
  return out;
}

double cmi_via_entropies(const Table3& joint) {
  double total = 0.0;
  for (const auto& slice : joint) total += slice.sum();
  // H(Z1|Z3) - H(Z1|Z2,Z3) = sum p(z1,z2,z3) log p(z1|z2,z3) - sum p(z1,z3) log p(z1|z3)
  double h_z1_given_z3 = 0.0;
  double h_z1_given_z2z3 = 0.0;
  for (const auto& slice : joint) {
    const double p3 = slice.sum() / total;
    if (p3 == 0.0) continue;
    const Eigen::VectorXd p13 = slice.rowwise().sum() / total;
    const RowVector p23 = slice.colwise().sum() / total;
    for (Eigen::Index i = 0; i < slice.rows(); ++i) {
      if (p13(i) > 0.0) h_z1_given_z3 -= p13(i) * std::log(p13(i) / p3);
      for (Eigen::Index j = 0; j < slice.cols(); ++j) {
        const double p = slice(i, j) / total;
        if (p > 0.0) h_z1_given_z2z3 -= p * std::log(p / p23(j));
      }
    }
  }
  return h_z1_given_z3 - h_z1_given_z2z3;
}

Table3 decoded_joint(const DiscreteJoint& joint, const DecoderTable& decoder) {
  const int nxa = joint.num_contexts() * joint.num_actions();
  Table3 out(2, Matrix::Zero(nxa, joint.num_feedback()));
  for (int x = 0; x < joint.num_contexts(); ++x) {
    for (int a = 0; a < joint.num_actions(); ++a) {
      const int xa = x * joint.num_actions() + a;
      for (int y = 0; y < joint.num_feedback(); ++y) {
        const double m = joint.at(x, a, 0, y) + joint.at(x, a, 1, y);
        if (m == 0.0) continue;
        const double psi = decoder(x, a, y);
        out[1](xa, y) += m * psi;
        out[0](xa, y) += m * (1.0 - psi);
      }
    }
  }
  return out;
}

DecodedTerms decoded_terms(const DiscreteJoint& joint, const DecoderTable& decoder, const FDivergence& f) {
  const Table3 q = decoded_joint(joint, decoder);
  const Eigen::Index nxa = q[0].rows();
  const Eigen::Index ny = q[0].cols();
  DecodedTerms t;
  t.cmi_y_xa_given_r = exact_f_cmi(q, f);

  Matrix xa_r(nxa, 2);
  xa_r.col(0) = q[0].rowwise().sum();
  xa_r.col(1) = q[1].rowwise().sum();
  t.mi_xa_r = exact_f_mi(xa_r, f);

  Table3 by_xa(static_cast<std::size_t>(nxa), Matrix::Zero(ny, 2));
  for (Eigen::Index xa = 0; xa < nxa; ++xa) {
    by_xa[static_cast<std::size_t>(xa)].col(0) = q[0].row(xa).transpose();
    by_xa[static_cast<std::size_t>(xa)].col(1) = q[1].row(xa).transpose();
  }
  t.cmi_y_r_given_xa = exact_f_cmi(by_xa, f);

  Matrix y_r(ny, 2);
  y_r.col(0) = q[0].colwise().sum().transpose();
  y_r.col(1) = q[1].colwise().sum().transpose();
  t.mi_y_r = exact_f_mi(y_r, f);

  t.mi_y_xa = exact_f_mi(Matrix(q[0] + q[1]), f);
  return t;
}

double true_feedback_reward_mi(const DiscreteJoint& joint) {
  Matrix r_y = Matrix::Zero(2, joint.num_feedback());
  for (int x = 0; x < joint.num_contexts(); ++x)
    for (int a = 0; a < joint.num_actions(); ++a)
      for (int r = 0; r < 2; ++r)
        for (int y = 0; y < joint.num_feedback(); ++y) r_y(r, y) += joint.at(x, a, r, y);
  return exact_f_mi(r_y, FDivergence::kl());
}

namespace {

struct ObjectiveParts {
  double value;
  double cmi_kl;
};

ObjectiveParts objective_parts(const DiscreteJoint& joint, const DecoderTable& decoder, double beta,
                               const FDivergence& f1, const FDivergence& f2) {
  const Table3 q = decoded_joint(joint, decoder);
  Matrix xa_r(q[0].rows(), 2);
  xa_r.col(0) = q[0].rowwise().sum();
  xa_r.col(1) = q[1].rowwise().sum();
  const double cmi_f1 = exact_f_cmi(q, f1);
  const double cmi_kl = f1.kind() == Divergence::kKl ? cmi_f1 : exact_f_cmi(q, FDivergence::kl());
  return {cmi_f1 - beta * exact_f_mi(xa_r, f2), cmi_kl};
}

}  // namespace

double exact_objective(const DiscreteJoint& joint, const DecoderTable& decoder, double beta, const FDivergence& f1,
                       const FDivergence& f2) {
  return objective_parts(joint, decoder, beta, f1, f2).value;
}

Table3 conditional_product(const DiscreteJoint& joint, const DecoderTable& decoder) {
  const Table3 q = decoded_joint(joint, decoder);
  Table3 out(2, Matrix::Zero(q[0].rows(), q[0].cols()));
  for (int r = 0; r < 2; ++r) {
    const double mass = q[r].sum();
    if (mass == 0.0) continue;
    const Eigen::VectorXd xa = q[r].rowwise().sum();
    const RowVector y_given_r = q[r].colwise().sum() / mass;
    out[r] = xa * y_given_r;
  }
  return out;
}

GridResult grid_minimize_objective(const DiscreteJoint& joint, double beta, DecoderInput input,
                                   const GridOptions& options) {
  if (options.resolution < 2) throw ContractError("grid resolution must be at least 2");
  const std::vector<int> support =
      input == DecoderInput::kFeedback ? joint.feedback_support() : joint.xay_support();
  const double tables = std::pow(static_cast<double>(options.resolution), static_cast<double>(support.size()));
  if (tables > static_cast<double>(options.max_tables)) {
    throw ContractError("grid search would evaluate " + std::to_string(tables) + " decoder tables (limit " +
                        std::to_string(options.max_tables) + ")");
  }
  std::vector<double> grid(static_cast<std::size_t>(options.resolution));
  for (int i = 0; i < options.resolution; ++i) {
    grid[static_cast<std::size_t>(i)] =
        options.clamp + (1.0 - 2.0 * options.clamp) * static_cast<double>(i) / (options.resolution - 1);
  }

  DecoderTable table = DecoderTable::constant(joint, input, 0.5);
  std::vector<int> digits(support.size(), 0);
  struct Candidate {
    std::vector<int> digits;
    double value;
    double cmi;
  };
  std::vector<Candidate> candidates;
  double best = std::numeric_limits<double>::infinity();
  GridResult result;

  while (true) {
    for (std::size_t k = 0; k < support.size(); ++k) {
      table.psi[static_cast<std::size_t>(support[k])] = grid[static_cast<std::size_t>(digits[k])];
    }
    const auto parts = objective_parts(joint, table, beta, options.f1, options.f2);
    ++result.evaluated;
    if (parts.value < best + options.tie_tolerance) {
      if (parts.value < best) best = parts.value;
      candidates.push_back({digits, parts.value, parts.cmi_kl});
      // Drop candidates that are no longer within tolerance of the best.
      std::erase_if(candidates, [&](const Candidate& c) { return c.value > best + options.tie_tolerance; });
    }
    std::size_t k = 0;
    while (k < digits.size() && ++digits[k] == options.resolution) digits[k++] = 0;
    if (k == digits.size()) break;
  }

  auto materialize = [&](const std::vector<int>& d) {
    DecoderTable t = DecoderTable::constant(joint, input, 0.5);
    for (std::size_t k = 0; k < support.size(); ++k) {
      t.psi[static_cast<std::size_t>(support[k])] = grid[static_cast<std::size_t>(d[k])];
    }
    return t;
  };
  const auto best_it = std::min_element(candidates.begin(), candidates.end(),
                                        [](const Candidate& a, const Candidate& b) { return a.value < b.value; });
  result.best = materialize(best_it->digits);
  result.value = best_it->value;
  result.cmi = best_it->cmi;
  for (const auto& c : candidates) {
    result.minimizers.push_back(materialize(c.digits));
    result.minimizer_cmi.push_back(c.cmi);
  }
  return result;
}

double exact_policy_decoded_return(const DiscreteJoint& joint, const DecoderTable& decoder,
                                   std::span<const int> action_of) {
  if (static_cast<int>(action_of.size()) != joint.num_contexts()) throw ShapeError("one action per context required");
  double value = 0.0;
  for (int x = 0; x < joint.num_contexts(); ++x) {
    double px = 0.0;
    for (int a = 0; a < joint.num_actions(); ++a)
      for (int r = 0; r < 2; ++r)
        for (int y = 0; y < joint.num_feedback(); ++y) px += joint.at(x, a, r, y);
    if (px == 0.0) continue;
    const int a = action_of[static_cast<std::size_t>(x)];
    double pxa = 0.0;
    double weighted = 0.0;
    for (int r = 0; r < 2; ++r)
      for (int y = 0; y < joint.num_feedback(); ++y) {
        pxa += joint.at(x, a, r, y);
        weighted += joint.at(x, a, r, y) * decoder(x, a, y);
      }
    if (pxa == 0.0) throw ContractError("policy action has zero probability under the joint");
    value += px * weighted / pxa;
  }
  return value;
}

double exact_policy_true_return(const DiscreteJoint& joint, std::span<const int> action_of) {
  if (static_cast<int>(action_of.size()) != joint.num_contexts()) throw ShapeError("one action per context required");
  double value = 0.0;
  for (int x = 0; x < joint.num_contexts(); ++x) {
    double px = 0.0;
    for (int a = 0; a < joint.num_actions(); ++a)
      for (int r = 0; r < 2; ++r)
        for (int y = 0; y < joint.num_feedback(); ++y) px += joint.at(x, a, r, y);
    if (px == 0.0) continue;
    const int a = action_of[static_cast<std::size_t>(x)];
    double pxa = 0.0;
    double hit = 0.0;
    for (int y = 0; y < joint.num_feedback(); ++y) {
      pxa += joint.at(x, a, 0, y) + joint.at(x, a, 1, y);
      hit += joint.at(x, a, 1, y);
    }
    if (pxa == 0.0) throw ContractError("policy action has zero probability under the joint");
    value += px * hit / pxa;
  }
  return value;
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_gradcheck(const std::function<double(std::span<const double>)>& value,
                                      std::span<const double> analytic_gradient, std::span<const double> point,
                                      double step) {
  if (!(step > 0)) throw ContractError("gradcheck step must be positive");
  if (analytic_gradient.size() != point.size()) throw ShapeError("gradcheck: gradient and point differ in size");
  std::vector<double> x(point.begin(), point.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = value(x);
    x[i] = orig - step;
    const double down = value(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("gradcheck: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = analytic_gradient[i];
    if (!std::isfinite(analytic)) throw NonFiniteError("gradcheck: non-finite analytic gradient at " + std::to_string(i));
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
    const double err = std::abs(analytic - numeric) / denom;
    if (i == 0 || err > result.max_error) {
      result.max_error = err;
      result.worst_index = i;
      result.analytic = analytic;
      result.numeric = numeric;
    }
  }
  return result;
}

GradCheckResult gradcheck_parameters(std::span<const Tensor> params, const std::function<Tensor()>& loss,
                                     double step) {
  const std::vector<double> start = flatten_values(params);
  for (auto p : params) p.zero_grad();
  backward(loss());
  const std::vector<double> analytic = flatten_grads(params);
  for (auto p : params) p.zero_grad();
  auto value = [&](std::span<const double> x) {
    assign_flat(params, x);
    NoGradGuard guard;
    return loss().item();
  };
  GradCheckResult result = finite_diff_gradcheck(value, analytic, start, step);
  assign_flat(params, start);
  return result;
}

}  // namespace vigl::oracle
