#include "vigl/env.hpp"
#include "vigl/errors.hpp"
#include "vigl/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace vigl;
using namespace vigl::oracle;

namespace {

const double kLn2 = std::numbers::ln2;

Matrix random_table(int r, int c, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m / m.sum();
}

Table3 random_table3(int a, int b, int c, std::mt19937_64& rng) {
  Table3 t;
  double total = 0.0;
  for (int k = 0; k < c; ++k) {
    t.push_back(random_table(a, b, rng));
    total += t.back().sum();
  }
  for (auto& m : t) m /= total;
  return t;
}

DiscreteJoint random_joint(int nx, int na, int ny, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.7, 1.0);
  std::vector<double> table(static_cast<std::size_t>(nx * na * 2 * ny));
  double total = 0.0;
  for (double& v : table) total += (v = g(rng));
  for (double& v : table) v /= total;
  return DiscreteJoint(nx, na, ny, std::move(table));
}

DecoderTable random_decoder(const DiscreteJoint& j, DecoderInput input, std::mt19937_64& rng, double c = 0.01) {
  std::uniform_real_distribution<double> u(c, 1.0 - c);
  DecoderTable d;
  d.input = input;
  d.num_actions = j.num_actions();
  d.num_feedback = j.num_feedback();
  const std::size_t n = input == DecoderInput::kFeedback
                            ? static_cast<std::size_t>(j.num_feedback())
                            : static_cast<std::size_t>(j.num_contexts() * j.num_actions() * j.num_feedback());
  d.psi.resize(n);
  for (double& v : d.psi) v = u(rng);
  return d;
}

// Shannon entropy in nats of an unnormalized-free probability vector.
double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

// I(Z1; Z2 | Z3) = H(Z1, Z3) + H(Z2, Z3) - H(Z1, Z2, Z3) - H(Z3).
double cmi_by_entropy(const Table3& t) {
  std::vector<double> z13, z23, z123, z3;
  for (const Matrix& m : t) {
    z3.push_back(m.sum());
    for (Eigen::Index i = 0; i < m.rows(); ++i) z13.push_back(m.row(i).sum());
    for (Eigen::Index j = 0; j < m.cols(); ++j) z23.push_back(m.col(j).sum());
    for (Eigen::Index i = 0; i < m.size(); ++i) z123.push_back(m.data()[i]);
  }
  return entropy(z13) + entropy(z23) - entropy(z123) - entropy(z3);
}

DecoderTable ground_truth_decoder(const DiscreteJoint& j) {
  // Feedback class 1 is the "reward 1" digit; everything else decodes to 0.
  DecoderTable d;
  d.input = DecoderInput::kFeedback;
  d.num_actions = j.num_actions();
  d.num_feedback = j.num_feedback();
  d.psi.assign(static_cast<std::size_t>(j.num_feedback()), 0.0);
  d.psi[1] = 1.0;
  return d;
}

}  // namespace

TEST_SUITE("exact mutual information") {
  TEST_CASE("doubly symmetric binary source") {
    Matrix joint(2, 2);
    joint << 0.45, 0.05, 0.05, 0.45;
    const double expected = kLn2 + 0.9 * std::log(0.9) + 0.1 * std::log(0.1);
    CHECK(std::abs(exact_f_mi(joint, FDivergence::kl()) - expected) < 1e-9);
    CHECK(expected == doctest::Approx(0.3680).epsilon(1e-4));
  }

  TEST_CASE("independent variables carry no information") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix a = random_table(3, 1, rng), b = random_table(1, 4, rng);
      const Matrix joint = a * b;
      CHECK(std::abs(exact_f_mi(joint, FDivergence::kl())) < 1e-12);
      CHECK(std::abs(exact_f_mi(joint, FDivergence::chi2())) < 1e-12);
    }
  }

  TEST_CASE("copy channel gives log 2") {
    Matrix joint(2, 2);
    joint << 0.5, 0.0, 0.0, 0.5;
    CHECK(exact_f_mi(joint, FDivergence::kl()) == doctest::Approx(kLn2).epsilon(1e-14));
  }

  TEST_CASE("large independent tables stay at zero") {
    std::mt19937_64 rng(2);
    const Matrix joint = random_table(150, 1, rng) * random_table(1, 150, rng);
    CHECK(std::abs(exact_f_mi(joint, FDivergence::kl())) < 1e-12);
  }

  TEST_CASE("non-negativity on random joints") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
        CHECK(exact_f_mi(random_table(3, 4, rng), f) >= 0.0);
        CHECK(exact_f_cmi(random_table3(2, 3, 2, rng), f) >= 0.0);
      }
    }
  }

  TEST_CASE("KL never exceeds chi-squared") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix p = random_table(1, 6, rng), q = random_table(1, 6, rng);
      const std::span<const double> ps(p.data(), 6), qs(q.data(), 6);
      CHECK(exact_f_divergence(ps, qs, FDivergence::kl()) <= exact_f_divergence(ps, qs, FDivergence::chi2()));
    }
  }

  TEST_CASE("divergence is infinite without absolute continuity") {
    const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
    CHECK(std::isinf(exact_f_divergence(p, q, FDivergence::kl())));
  }
}

TEST_SUITE("exact conditional mutual information") {
  TEST_CASE("conditionally independent by construction") {
    std::mt19937_64 rng(5);
    Table3 t;
    for (int k = 0; k < 3; ++k) t.push_back(random_table(3, 1, rng) * random_table(1, 2, rng) / 3.0);
    CHECK(std::abs(exact_f_cmi(t, FDivergence::kl())) < 1e-12);
    CHECK(std::abs(exact_f_cmi(t, FDivergence::chi2())) < 1e-12);
  }

  TEST_CASE("constant conditioning reduces to plain MI") {
    std::mt19937_64 rng(6);
    const Matrix m = random_table(3, 3, rng);
    for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
      CHECK(exact_f_cmi(Table3{m}, f) == doctest::Approx(exact_f_mi(m, f)).epsilon(1e-13));
    }
  }

  TEST_CASE("zero-mass slices contribute nothing") {
    std::mt19937_64 rng(7);
    const Matrix m = random_table(2, 2, rng);
    CHECK(exact_f_cmi(Table3{m, Matrix::Zero(2, 2)}, FDivergence::kl()) ==
          doctest::Approx(exact_f_mi(m, FDivergence::kl())));
  }

  TEST_CASE("random 2x2x2 joints agree with the entropy decomposition") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const Table3 t = random_table3(2, 2, 2, rng);
      const double direct = exact_f_cmi(t, FDivergence::kl());
      CHECK(std::abs(direct - cmi_by_entropy(t)) < 1e-9);
      CHECK(std::abs(direct - cmi_via_entropies(t)) < 1e-9);
    }
  }
}

TEST_SUITE("objective") {
  TEST_CASE("chain rule on random joints") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      const DiscreteJoint j = random_joint(2, 2, 4, rng);
      const DecoderTable d = random_decoder(j, trial % 2 ? DecoderInput::kFeedback
                                                         : DecoderInput::kContextActionFeedback, rng);
      const DecodedTerms t = decoded_terms(j, d);
      CHECK(std::abs(t.cmi_y_xa_given_r - (t.cmi_y_r_given_xa - t.mi_y_r + t.mi_y_xa)) < 1e-9);
    }
  }

  TEST_CASE("decoded CMI matches an independent entropy computation") {
    std::mt19937_64 rng(10);
    const DiscreteJoint j = random_joint(2, 3, 3, rng);
    const DecoderTable d = random_decoder(j, DecoderInput::kFeedback, rng);
    // Rebuild q(xa, y, rpsi) by hand and compare.
    Table3 q(2, Matrix::Zero(6, 3));
    for (int x = 0; x < 2; ++x)
      for (int a = 0; a < 3; ++a)
        for (int r = 0; r < 2; ++r)
          for (int y = 0; y < 3; ++y) {
            const double p = j.at(x, a, r, y);
            q[1](x * 3 + a, y) += p * d.psi[static_cast<std::size_t>(y)];
            q[0](x * 3 + a, y) += p * (1.0 - d.psi[static_cast<std::size_t>(y)]);
          }
    CHECK(decoded_terms(j, d).cmi_y_xa_given_r == doctest::Approx(cmi_by_entropy(q)).epsilon(1e-10));
  }

  TEST_CASE("constant one-half decoder gives objective 0") {
    std::mt19937_64 rng(11);
    const DiscreteJoint j = random_joint(2, 2, 3, rng);
    const DecoderTable d = DecoderTable::constant(j, DecoderInput::kFeedback, 0.5);
    const DecodedTerms t = decoded_terms(j, d);
    CHECK(std::abs(t.mi_xa_r) < 1e-12);
    CHECK(std::abs(exact_objective(j, d, 10.0) - t.cmi_y_xa_given_r) < 1e-12);
    // R_psi independent of everything: I(Y; X,A | R) reduces to I(Y; X,A).
    CHECK(t.cmi_y_xa_given_r == doctest::Approx(t.mi_y_xa).epsilon(1e-12));
  }

  TEST_CASE("ground-truth decoder on the noiseless env attains zero CMI") {
    const Environment env = make_synthetic_env(3, 3, 5, {});
    const DiscreteJoint j = env.enumerate_joint();
    const DecoderTable d = ground_truth_decoder(j);
    CHECK(std::abs(exact_objective(j, d, 0.0)) < 1e-12);
    CHECK(decoded_terms(j, d).mi_xa_r > 0.0);
  }

  TEST_CASE("objective is invariant under psi -> 1 - psi") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const DiscreteJoint j = random_joint(2, 2, 4, rng);
      const DecoderTable d = random_decoder(j, trial % 2 ? DecoderInput::kFeedback
                                                         : DecoderInput::kContextActionFeedback, rng);
      for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
        CHECK(std::abs(exact_objective(j, d, 3.0, f, f) - exact_objective(j, d.flipped(), 3.0, f, f)) < 1e-12);
      }
    }
  }

  TEST_CASE("conditional product has the right marginals") {
    std::mt19937_64 rng(13);
    const DiscreteJoint j = random_joint(2, 2, 3, rng);
    const DecoderTable d = random_decoder(j, DecoderInput::kFeedback, rng);
    const Table3 q = decoded_joint(j, d);
    const Table3 cp = conditional_product(j, d);
    for (int r = 0; r < 2; ++r) {
      CHECK((cp[r].rowwise().sum() - q[r].rowwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
      CHECK((cp[r].colwise().sum() - q[r].colwise().sum()).cwiseAbs().maxCoeff() < 1e-14);
    }
  }

  TEST_CASE("joint validation") {
    DiscreteJoint j(1, 1, 2);
    j.at(0, 0, 0, 0) = 0.5;
    CHECK_THROWS_AS(j.validate(), ContractError);
    j.at(0, 0, 1, 1) = 0.5;
    CHECK_NOTHROW(j.validate());
    j.at(0, 0, 1, 0) = -0.1;
    j.at(0, 0, 1, 1) = 0.6;
    CHECK_THROWS_AS(j.validate(), ContractError);
  }
}

TEST_SUITE("grid search") {
  TEST_CASE("realizable noiseless instance satisfies the regularization guarantees") {
    const Environment env = make_synthetic_env(2, 2, 4, {});
    const DiscreteJoint j = env.enumerate_joint();
    const double i_yr = true_feedback_reward_mi(j);
    GridOptions options;
    options.clamp = 0.0;
    for (double beta : {0.5, 1.0, 5.0}) {
      const GridResult res = grid_minimize_objective(j, beta, DecoderInput::kFeedback, options);
      CHECK(res.cmi <= 1e-6);
      for (double c : res.minimizer_cmi) CHECK(c <= 1e-6);
      CHECK(res.value >= -beta * i_yr - 1e-9);
      CHECK(res.cmi <= beta * (kLn2 - i_yr));
    }
  }

  TEST_CASE("search-space overflow is a contract error with a size estimate") {
    const Environment env = make_synthetic_env(3, 3, 5, {NoiseType::kContextAction, 0.3});
    const DiscreteJoint j = env.enumerate_joint();
    GridOptions options;
    options.max_tables = 1000;
    try {
      grid_minimize_objective(j, 1.0, DecoderInput::kContextActionFeedback, options);
      FAIL("expected a contract error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("tables") != std::string::npos);
    }
  }

  TEST_CASE("grid minimum is no larger than any random table on the grid") {
    const Environment env = make_synthetic_env(2, 2, 4, {NoiseType::kIndependent, 0.2});
    const DiscreteJoint j = env.enumerate_joint();
    const GridResult res = grid_minimize_objective(j, 1.0, DecoderInput::kFeedback);
    CHECK(res.evaluated == 6561);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pick(0, 8);
    const auto support = j.feedback_support();
    for (int trial = 0; trial < 200; ++trial) {
      DecoderTable d = DecoderTable::constant(j, DecoderInput::kFeedback, 0.5);
      for (int y : support) d.psi[static_cast<std::size_t>(y)] = 0.01 + pick(rng) * (0.98 / 8.0);
      CHECK(exact_objective(j, d, 1.0) >= res.value - 1e-12);
    }
  }
}

TEST_SUITE("policy values") {
  TEST_CASE("the labelling policy has true return 1 and chance has 1/A") {
    const Environment env = make_synthetic_env(4, 4, 6, {});
    const DiscreteJoint j = env.enumerate_joint();
    const std::vector<int> perfect{0, 1, 2, 3}, constant{0, 0, 0, 0};
    CHECK(exact_policy_true_return(j, perfect) == doctest::Approx(1.0));
    CHECK(exact_policy_true_return(j, constant) == doctest::Approx(0.25));
    CHECK(exact_policy_decoded_return(j, ground_truth_decoder(j), perfect) == doctest::Approx(1.0));
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("quadratic is exact up to rounding") {
    const std::vector<double> point{0.3, -1.2, 2.0};
    auto f = [](std::span<const double> x) { return 3 * x[0] * x[0] + x[0] * x[1] - 0.5 * x[2] * x[2]; };
    const std::vector<double> grad{6 * point[0] + point[1], point[0], -point[2]};
    CHECK(finite_diff_gradcheck(f, grad, point).max_error < 1e-9);
  }

  TEST_CASE("zero function has zero gradient both ways") {
    const std::vector<double> point{1.0, 2.0}, grad{0.0, 0.0};
    const GradCheckResult r = finite_diff_gradcheck([](std::span<const double>) { return 0.0; }, grad, point);
    CHECK(r.max_error == 0.0);
    CHECK(r.numeric == 0.0);
  }

  TEST_CASE("a wrong gradient is caught") {
    const std::vector<double> point{1.0}, grad{2.5};
    const auto r = finite_diff_gradcheck([](std::span<const double> x) { return x[0] * x[0]; }, grad, point);
    CHECK(r.max_error > 0.1);
    CHECK(r.worst_index == 0);
  }

  TEST_CASE("non-finite evaluations raise") {
    const std::vector<double> point{0.0}, grad{0.0};
    CHECK_THROWS_AS(finite_diff_gradcheck([](std::span<const double> x) { return std::log(x[0]); }, grad, point),
                    NonFiniteError);
  }
}
