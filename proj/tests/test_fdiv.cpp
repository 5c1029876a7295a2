#include "vigl/errors.hpp"
#include "vigl/fdiv.hpp"
#include "vigl/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace vigl;

namespace {

// sup_u {u t - f(u)} over a fine grid on u >= 0.
double numeric_conjugate(const FDivergence& f, double t) {
  double best = -f.generator(0.0);
  for (int i = 1; i <= 200000; ++i) {
    const double u = i * 1e-4;
    best = std::max(best, u * t - f.generator(u));
  }
  return best;
}

Tensor column(const std::vector<double>& v) {
  return Tensor::constant(Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1));
}

// Bound with exact expectations: critic value per cell, weighted by p and q.
double exact_bound(const FDivergence& f, const std::vector<double>& critic, const std::vector<double>& p,
                   const std::vector<double>& q) {
  const Tensor t = column(critic);
  return variational_div_lower_bound(f, t, t, column(p), column(q), 1.0, 1.0).item();
}

std::vector<double> random_distribution(std::size_t n, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) total += (v = g(rng) + 1e-3);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

TEST_SUITE("conjugate") {
  TEST_CASE("closed forms agree with a numeric supremum") {
    const FDivergence kl = FDivergence::kl();
    const FDivergence chi2 = FDivergence::chi2();
    CHECK(kl.conjugate(1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(numeric_conjugate(kl, 1.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(chi2.conjugate(0.0) == 0.0);
    CHECK(numeric_conjugate(chi2, 0.0) == doctest::Approx(0.0));
    CHECK(chi2.conjugate(2.0) == doctest::Approx(3.0));
    CHECK(numeric_conjugate(chi2, 2.0) == doctest::Approx(3.0).epsilon(1e-6));
    // Below t = -2 the supremum over u >= 0 sits at u = 0.
    CHECK(chi2.conjugate(-5.0) == -1.0);
    CHECK(numeric_conjugate(chi2, -5.0) == doctest::Approx(-1.0));
  }

  TEST_CASE("e^t form drops the -1") {
    CHECK(FDivergence::kl(ConjugateForm::kPaper).conjugate(0.0) == 1.0);
    CHECK(FDivergence::kl().conjugate(0.0) == doctest::Approx(std::exp(-1.0)));
  }

  TEST_CASE("generators vanish at 1") {
    CHECK(FDivergence::kl().generator(1.0) == 0.0);
    CHECK(FDivergence::chi2().generator(1.0) == 0.0);
  }

  TEST_CASE("Fenchel-Young holds on a grid with equality at f'(u)") {
    const double bound = 10.0;
    for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
      for (int i = 1; i <= 100; ++i) {
        const double u = 0.1 * i;
        for (int j = 0; j <= 200; ++j) {
          const double t = -bound + 0.1 * j;
          CHECK(f.conjugate(t) >= u * t - f.generator(u) - 1e-12);
        }
        const double t_star = f.generator_derivative(u);
        CHECK(std::abs(f.conjugate(t_star) - (u * t_star - f.generator(u))) <= 1e-9);
      }
    }
  }

  TEST_CASE("tags parse and unknown tags are config errors") {
    CHECK(parse_divergence("kl") == Divergence::kKl);
    CHECK(parse_divergence("chi2") == Divergence::kChi2);
    CHECK(parse_conjugate_form("nwj") == ConjugateForm::kTight);
    CHECK(parse_conjugate_form("paper") == ConjugateForm::kPaper);
    CHECK_THROWS_AS(parse_divergence("js"), ConfigError);
    CHECK_THROWS_AS(parse_conjugate_form("dv"), ConfigError);
  }

  TEST_CASE("tensor conjugate matches the scalar one") {
    Matrix t(1, 5);
    t << -9, -2.5, -1, 0.5, 3;
    for (const FDivergence& f : {FDivergence::kl(), FDivergence::kl(ConjugateForm::kPaper), FDivergence::chi2()}) {
      const Matrix out = f.conjugate(Tensor::constant(t)).value();
      for (int j = 0; j < 5; ++j) CHECK(out(0, j) == doctest::Approx(f.conjugate(t(0, j))).epsilon(1e-14));
    }
  }
}

TEST_SUITE("variational bound") {
  TEST_CASE("constant zero critic under KL gives -1/e") {
    const std::vector<double> zeros(5, 0.0);
    CHECK(variational_div_lower_bound(FDivergence::kl(), zeros, zeros) == doctest::Approx(-std::exp(-1.0)));
  }

  TEST_CASE("constant critic c peaks at c = 1 with value 0") {
    double best_c = 0, best = -1e9;
    for (int i = -300; i <= 300; ++i) {
      const double c = i * 0.01;
      const std::vector<double> v(3, c);
      const double value = variational_div_lower_bound(FDivergence::kl(), v, v);
      CHECK(value == doctest::Approx(c - std::exp(c - 1.0)));
      if (value > best) best = value, best_c = c;
    }
    CHECK(best_c == doctest::Approx(1.0));
    CHECK(best == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("critic G = 1 under KL gives exactly 0") {
    const std::vector<double> ones(4, 1.0);
    CHECK(variational_div_lower_bound(FDivergence::kl(), ones, ones) == 0.0);
  }

  TEST_CASE("empty batch is a contract error") {
    const std::vector<double> some{1.0};
    CHECK_THROWS_AS(variational_div_lower_bound(FDivergence::kl(), {}, some), ContractError);
    CHECK_THROWS_AS(variational_div_lower_bound(FDivergence::kl(), some, {}), ContractError);
  }

  TEST_CASE("optimal critic on two states reaches the exact divergence") {
    const std::vector<double> p{0.8, 0.2}, q{0.3, 0.7};
    const FDivergence kl = FDivergence::kl();
    const FDivergence chi2 = FDivergence::chi2();
    std::vector<double> t_kl(2), t_chi2(2);
    for (int i = 0; i < 2; ++i) {
      t_kl[i] = std::log(p[i] / q[i]) + 1.0;
      t_chi2[i] = 2.0 * (p[i] / q[i] - 1.0);
    }
    CHECK(std::abs(exact_bound(kl, t_kl, p, q) - oracle::exact_f_divergence(p, q, kl)) < 1e-9);
    CHECK(std::abs(exact_bound(chi2, t_chi2, p, q) - oracle::exact_f_divergence(p, q, chi2)) < 1e-9);
  }

  TEST_CASE("swapping P and Q targets the reverse divergence") {
    const std::vector<double> p{0.9, 0.1}, q{0.5, 0.5};
    const FDivergence kl = FDivergence::kl();
    std::vector<double> reverse(2);
    for (int i = 0; i < 2; ++i) reverse[i] = std::log(q[i] / p[i]) + 1.0;
    const double forward_exact = oracle::exact_f_divergence(p, q, kl);
    const double reverse_exact = oracle::exact_f_divergence(q, p, kl);
    CHECK(std::abs(forward_exact - reverse_exact) > 0.05);
    CHECK(exact_bound(kl, reverse, q, p) == doctest::Approx(reverse_exact).epsilon(1e-9));
    CHECK(exact_bound(kl, reverse, p, q) < forward_exact);
  }

  TEST_CASE("any critic stays below the exact divergence") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
      for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_distribution(6, rng);
        const auto q = random_distribution(6, rng);
        std::vector<double> critic(6);
        for (double& t : critic) t = u(rng);
        CHECK(exact_bound(f, critic, p, q) <= oracle::exact_f_divergence(p, q, f) + 1e-12);
      }
    }
  }
}

TEST_SUITE("critic") {
  TEST_CASE("outputs stay inside [-B, B] and KL conjugate stays finite") {
    std::mt19937_64 rng(3);
    TowerNet net({{3, false}}, 1, {4, 2, 4, Activation::kTanh}, rng);
    for (Tensor p : net.parameters()) p.mutable_value() *= 1e4;
    const VariationalCritic critic(net, 10.0);
    const Matrix out = critic(Matrix(Matrix::Random(50, 3) * 100.0)).value();
    CHECK(out.cwiseAbs().maxCoeff() <= 10.0);
    const Matrix conj = FDivergence::kl().conjugate(Tensor::constant(out)).value();
    CHECK(conj.allFinite());
    CHECK(conj.maxCoeff() <= std::exp(9.0));
  }

  TEST_CASE("critic needs a scalar head and a positive bound") {
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(VariationalCritic(TowerNet({{3, false}}, 2, {}, rng)), ConfigError);
    CHECK_THROWS_AS(VariationalCritic(TowerNet({{3, false}}, 1, {}, rng), 0.0), ConfigError);
  }

  TEST_CASE("independent inputs with the constant optimal critic give 0") {
    std::mt19937_64 rng(1);
    TowerNet net({{2, false}}, 1, {4, 2, 0, Activation::kTanh}, rng);
    for (Tensor p : net.parameters()) p.mutable_value().setZero();
    // Output bias so that B * tanh(z / B) = 1.
    net.parameters().back().mutable_value()(0, 0) = 10.0 * std::atanh(0.1);
    const VariationalCritic critic(net);
    const CriticBatch joint{Matrix::Random(20, 2), {}, 0.0};
    const CriticBatch product{Matrix::Random(20, 2), {}, 0.0};
    CHECK(mi_loss(FDivergence::kl(), critic, joint, product).item() == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("weighted bound is differentiable in critic weights and sample weights") {
    std::mt19937_64 rng(17);
    TowerNet net({{2, true}, {1, false}}, 1, {5, 3, 4, Activation::kTanh}, rng);
    const VariationalCritic critic(net);
    Tensor w = Tensor::parameter((Matrix::Random(8, 1).array() * 0.4 + 0.5).matrix());
    const Matrix fp = Matrix::Random(8, 3), fq = Matrix::Random(8, 3);
    std::vector<Tensor> params = critic.parameters();
    params.push_back(w);
    for (const FDivergence& f : {FDivergence::kl(), FDivergence::chi2()}) {
      auto loss = [&] {
        return conditional_mi_loss(f, critic, {fp, w, 8.0}, {fq, affine(w, -1.0, 1.0), 8.0});
      };
      CHECK(oracle::gradcheck_parameters(params, loss).max_error < 1e-4);
    }
  }
}
