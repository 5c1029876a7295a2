#include "vigl/errors.hpp"
#include "vigl/nn.hpp"
#include "vigl/oracle.hpp"
#include "vigl/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace vigl;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// sum(op(x) .* W) with W fixed, so every output entry gets its own upstream
// gradient.
double max_op_error(const std::function<Tensor(std::span<const Tensor>)>& op, std::vector<Matrix> inputs,
                    std::mt19937_64& rng) {
  std::vector<Tensor> params;
  for (auto& m : inputs) params.push_back(Tensor::parameter(m));
  const Tensor probe = op(params);
  const Tensor weights = Tensor::constant(random_matrix(probe.rows(), probe.cols(), rng));
  auto loss = [&] { return sum(mul(op(params), weights)); };
  return oracle::gradcheck_parameters(params, loss).max_error;
}

}  // namespace

TEST_SUITE("forward") {
  TEST_CASE("identity layer passes input through") {
    DenseLayer layer{Tensor::parameter(Matrix::Identity(3, 3)), Tensor::parameter(Matrix::Zero(1, 3)),
                     Activation::kIdentity};
    Mlp net({layer});
    Matrix x(2, 3);
    x << 1, -2, 3, 0.5, 0, -7;
    CHECK(net.forward_values(x).isApprox(x));
  }

  TEST_CASE("all-zero sigmoid layer outputs one half") {
    DenseLayer layer{Tensor::parameter(Matrix::Zero(4, 2)), Tensor::parameter(Matrix::Zero(1, 2)),
                     Activation::kSigmoid};
    Mlp net({layer});
    std::mt19937_64 rng(3);
    const Matrix out = net.forward_values(random_matrix(5, 4, rng, -100, 100));
    CHECK((out.array() == 0.5).all());
  }

  TEST_CASE("two-layer net matches an explicit loop") {
    std::mt19937_64 rng(11);
    const int dims[] = {3, 5, 2};
    const Activation acts[] = {Activation::kRelu, Activation::kIdentity};
    Mlp net(dims, acts, rng);
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix out = net.forward_values(x);

    const Matrix& w1 = net.layers()[0].weight.value();
    const Matrix& b1 = net.layers()[0].bias.value();
    const Matrix& w2 = net.layers()[1].weight.value();
    const Matrix& b2 = net.layers()[1].bias.value();
    for (int n = 0; n < 4; ++n) {
      double h[5];
      for (int j = 0; j < 5; ++j) {
        double s = b1(0, j);
        for (int i = 0; i < 3; ++i) s += x(n, i) * w1(i, j);
        h[j] = s > 0 ? s : 0.0;
      }
      for (int k = 0; k < 2; ++k) {
        double s = b2(0, k);
        for (int j = 0; j < 5; ++j) s += h[j] * w2(j, k);
        CHECK(out(n, k) == doctest::Approx(s).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("input width mismatch is a shape error") {
    std::mt19937_64 rng(1);
    const int dims[] = {3, 2};
    const Activation acts[] = {Activation::kIdentity};
    Mlp net(dims, acts, rng);
    CHECK_THROWS_AS(net.forward_values(Matrix::Zero(2, 4)), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::constant(Matrix::Zero(2, 3)), Tensor::constant(Matrix::Zero(2, 3))), ShapeError);
  }

  TEST_CASE("glorot init stays inside its limit and biases start at zero") {
    std::mt19937_64 rng(5);
    const int dims[] = {30, 20};
    const Activation acts[] = {Activation::kIdentity};
    Mlp net(dims, acts, rng);
    const double limit = std::sqrt(6.0 / 50.0);
    CHECK(net.layers()[0].weight.value().cwiseAbs().maxCoeff() <= limit);
    CHECK(net.layers()[0].bias.value().isZero());
  }
}

TEST_SUITE("backward") {
  TEST_CASE("non-scalar loss is a contract error") {
    Tensor w = Tensor::parameter(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(backward(scale(w, 2.0)), ContractError);
  }

  TEST_CASE("sum of parameters gives unit gradients") {
    std::mt19937_64 rng(2);
    Tensor w = Tensor::parameter(random_matrix(3, 4, rng));
    backward(sum(w));
    CHECK((w.grad().array() == 1.0).all());
  }

  TEST_CASE("w squared at 3 has gradient 6") {
    Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
    backward(square(w));
    CHECK(w.grad()(0, 0) == doctest::Approx(6.0));
  }

  TEST_CASE("scalar parameter as the loss itself") {
    Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
    backward(w);
    CHECK(w.grad()(0, 0) == 1.0);
  }

  TEST_CASE("gradients accumulate over repeated backward calls") {
    Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 3.0));
    const Tensor loss = square(w);
    backward(loss);
    backward(loss);
    CHECK(w.grad()(0, 0) == doctest::Approx(12.0));
    w.zero_grad();
    CHECK_FALSE(w.has_grad());
  }

  TEST_CASE("a shared subexpression receives both contributions") {
    Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
    const Tensor y = square(w);
    backward(add(y, mul(y, w)));  // w^2 + w^3 -> 2w + 3w^2 = 16
    CHECK(w.grad()(0, 0) == doctest::Approx(16.0));
  }

  TEST_CASE("no graph is recorded under NoGradGuard") {
    Tensor w = Tensor::parameter(Matrix::Ones(2, 2));
    Tensor out;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      out = sum(square(w));
    }
    CHECK(grad_enabled());
    CHECK_FALSE(out.requires_grad());
  }

  TEST_CASE("random MLP with mean-square loss passes gradcheck") {
    std::mt19937_64 rng(21);
    const int dims[] = {4, 6, 3};
    const Activation acts[] = {Activation::kTanh, Activation::kIdentity};
    Mlp net(dims, acts, rng);
    const Tensor x = Tensor::constant(random_matrix(7, 4, rng));
    const Tensor target = Tensor::constant(random_matrix(7, 3, rng));
    const auto params = net.parameters();
    auto loss = [&] { return mean(square(sub(net.forward(x), target))); };
    CHECK(oracle::gradcheck_parameters(params, loss).max_error < 1e-4);
  }
}

TEST_CASE("every differentiable op matches finite differences at 100 random points") {
  std::mt19937_64 rng(1234);
  using Op = std::function<Tensor(std::span<const Tensor>)>;
  struct Case {
    const char* name;
    Op op;
    std::function<std::vector<Matrix>()> inputs;
  };
  // ReLU and the chi^2 conjugate are sampled away from their kinks.
  auto away_from = [&](Eigen::Index r, Eigen::Index c, double kink) {
    Matrix m = random_matrix(r, c, rng, 0.05, 2.0);
    std::bernoulli_distribution sign(0.5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = kink + (sign(rng) ? m.data()[i] : -m.data()[i]);
    return m;
  };
  const int picks[] = {2, 0, 1};
  const int rows[] = {1, 1, 0, 2};
  const std::vector<Case> cases = {
      {"matmul", [](auto t) { return matmul(t[0], t[1]); },
       [&] { return std::vector{random_matrix(3, 4, rng), random_matrix(4, 2, rng)}; }},
      {"add", [](auto t) { return add(t[0], t[1]); },
       [&] { return std::vector{random_matrix(3, 2, rng), random_matrix(3, 2, rng)}; }},
      {"sub", [](auto t) { return sub(t[0], t[1]); },
       [&] { return std::vector{random_matrix(3, 2, rng), random_matrix(3, 2, rng)}; }},
      {"mul", [](auto t) { return mul(t[0], t[1]); },
       [&] { return std::vector{random_matrix(3, 2, rng), random_matrix(3, 2, rng)}; }},
      {"add_row", [](auto t) { return add_row(t[0], t[1]); },
       [&] { return std::vector{random_matrix(3, 4, rng), random_matrix(1, 4, rng)}; }},
      {"scale", [](auto t) { return scale(t[0], -1.7); }, [&] { return std::vector{random_matrix(2, 3, rng)}; }},
      {"affine", [](auto t) { return affine(t[0], 0.3, 2.0); }, [&] { return std::vector{random_matrix(2, 3, rng)}; }},
      {"relu", [](auto t) { return relu(t[0]); }, [&] { return std::vector{away_from(3, 3, 0.0)}; }},
      {"sigmoid", [](auto t) { return sigmoid(t[0]); },
       [&] { return std::vector{random_matrix(3, 3, rng, -6, 6)}; }},
      {"tanh", [](auto t) { return tanh(t[0]); }, [&] { return std::vector{random_matrix(3, 3, rng, -3, 3)}; }},
      {"exp", [](auto t) { return exp(t[0]); }, [&] { return std::vector{random_matrix(3, 3, rng, -2, 2)}; }},
      {"square", [](auto t) { return square(t[0]); }, [&] { return std::vector{random_matrix(3, 3, rng)}; }},
      {"pearson_conjugate", [](auto t) { return pearson_conjugate(t[0]); },
       [&] { return std::vector{away_from(3, 3, -2.0)}; }},
      {"sum", [](auto t) { return sum(t[0]); }, [&] { return std::vector{random_matrix(3, 3, rng)}; }},
      {"mean", [](auto t) { return mean(t[0]); }, [&] { return std::vector{random_matrix(3, 3, rng)}; }},
      {"concat_cols", [](auto t) { return concat_cols(t); },
       [&] { return std::vector{random_matrix(3, 2, rng), random_matrix(3, 1, rng)}; }},
      {"concat_rows", [](auto t) { return concat_rows(t); },
       [&] { return std::vector{random_matrix(2, 3, rng), random_matrix(1, 3, rng)}; }},
      {"slice_cols", [](auto t) { return slice_cols(t[0], 1, 2); }, [&] { return std::vector{random_matrix(3, 4, rng)}; }},
      {"gather_rows", [&](auto t) { return gather_rows(t[0], rows); },
       [&] { return std::vector{random_matrix(3, 2, rng)}; }},
      {"pick", [&](auto t) { return pick(t[0], picks); }, [&] { return std::vector{random_matrix(3, 3, rng)}; }},
      {"broadcast_column", [](auto t) { return broadcast_column(t[0], 4); },
       [&] { return std::vector{random_matrix(1, 1, rng)}; }},
  };
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int point = 0; point < 100; ++point) worst = std::max(worst, max_op_error(c.op, c.inputs(), rng));
    INFO("op ", c.name, " worst error ", worst);
    CHECK(worst < 1e-4);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("sgd descent and ascent") {
    for (auto [dir, expected] : {std::pair{Direction::kDescent, 0.8}, std::pair{Direction::kAscent, 1.2}}) {
      Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 1.0));
      Optimizer opt({OptimizerMethod::kSgd, 0.1}, {w});
      w.mutable_grad()(0, 0) = 2.0;
      opt.step(dir);
      CHECK(w.value()(0, 0) == doctest::Approx(expected));
    }
  }

  TEST_CASE("adam first step moves each coordinate by about the learning rate") {
    for (double g : {1e-3, 0.5, 40.0, -7.0}) {
      Tensor w = Tensor::parameter(Matrix::Zero(1, 1));
      Optimizer opt({OptimizerMethod::kAdam, 0.01}, {w});
      w.mutable_grad()(0, 0) = g;
      opt.step(Direction::kDescent);
      // m_hat = g, v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps).
      CHECK(w.value()(0, 0) == doctest::Approx(-0.01 * g / (std::abs(g) + 1e-8)).epsilon(1e-12));
    }
  }

  TEST_CASE("all-zero gradients leave parameters unchanged") {
    Tensor w = Tensor::parameter(Matrix::Constant(2, 2, 0.3));
    Optimizer opt({OptimizerMethod::kAdam, 0.1}, {w});
    w.mutable_grad().setZero();
    opt.step(Direction::kDescent);
    CHECK((w.value().array() == 0.3).all());
  }

  TEST_CASE("identical seeds give bit-identical parameters") {
    auto train = [](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      const int dims[] = {3, 8, 1};
      const Activation acts[] = {Activation::kTanh, Activation::kIdentity};
      Mlp net(dims, acts, rng);
      Optimizer opt({OptimizerMethod::kAdam, 0.01}, net.parameters());
      const Tensor x = Tensor::constant(random_matrix(16, 3, rng));
      for (int i = 0; i < 50; ++i) {
        opt.zero_grad();
        backward(mean(square(net.forward(x))));
        opt.step(Direction::kDescent);
      }
      return flatten_values(net.parameters());
    };
    CHECK(train(9) == train(9));
    CHECK(train(9) != train(10));
  }
}

TEST_SUITE("clipping") {
  TEST_CASE("below the threshold nothing changes") {
    Tensor w = Tensor::parameter(Matrix::Zero(1, 2));
    w.mutable_grad() << 0.3, 0.4;
    const Tensor params[] = {w};
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(0.5));
    CHECK(w.grad()(0, 0) == 0.3);
    CHECK(w.grad()(0, 1) == 0.4);
  }

  TEST_CASE("[3, 4] clips to [0.6, 0.8]") {
    Tensor w = Tensor::parameter(Matrix::Zero(1, 2));
    w.mutable_grad() << 3, 4;
    const Tensor params[] = {w};
    clip_grad_norm(params, 1.0);
    CHECK(w.grad()(0, 0) == doctest::Approx(0.6));
    CHECK(w.grad()(0, 1) == doctest::Approx(0.8));
  }

  TEST_CASE("post-clip norm never exceeds the limit and clipping is idempotent") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Tensor> params{Tensor::parameter(Matrix::Zero(2, 3)), Tensor::parameter(Matrix::Zero(1, 4))};
      for (auto& p : params) p.mutable_grad() = random_matrix(p.rows(), p.cols(), rng, -5, 5);
      const double max_norm = std::uniform_real_distribution<double>(0.1, 3.0)(rng);
      clip_grad_norm(params, max_norm);
      CHECK(grad_norm(params) <= max_norm * (1 + 1e-12));
      const auto once = flatten_grads(params);
      clip_grad_norm(params, max_norm);
      const auto twice = flatten_grads(params);
      for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-14));
    }
  }
}

TEST_SUITE("ema") {
  TEST_CASE("rate 0 copies the parameters") {
    Tensor w = Tensor::parameter(Matrix::Constant(2, 2, 4.0));
    std::vector<Matrix> shadow{Matrix::Zero(2, 2)};
    const Tensor params[] = {w};
    ema_update(shadow, params, 0.0);
    CHECK(shadow[0].isApprox(w.value()));
  }

  TEST_CASE("rate 0.99 from 0 toward 1 gives 0.01") {
    Tensor w = Tensor::parameter(Matrix::Ones(1, 1));
    std::vector<Matrix> shadow{Matrix::Zero(1, 1)};
    const Tensor params[] = {w};
    ema_update(shadow, params, 0.99);
    CHECK(shadow[0](0, 0) == doctest::Approx(0.01));
  }

  TEST_CASE("constant parameters are approached geometrically") {
    Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
    const Tensor params[] = {w};
    EmaShadow ema(params, 0.9);
    ema.mutable_values()[0](0, 0) = 0.0;
    for (int step = 1; step <= 50; ++step) {
      ema.update(params);
      CHECK(2.0 - ema.values()[0](0, 0) == doctest::Approx(2.0 * std::pow(0.9, step)).epsilon(1e-12));
    }
  }

  TEST_CASE("rate outside [0, 1) is a config error") {
    Tensor w = Tensor::parameter(Matrix::Ones(1, 1));
    std::vector<Matrix> shadow{Matrix::Zero(1, 1)};
    const Tensor params[] = {w};
    CHECK_THROWS_AS(ema_update(shadow, params, 1.0), ConfigError);
    CHECK_THROWS_AS(ema_update(shadow, params, -0.1), ConfigError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip keeps metadata and values") {
    std::mt19937_64 rng(4);
    const std::vector<Matrix> tensors{random_matrix(3, 2, rng), random_matrix(1, 5, rng)};
    std::stringstream buf;
    write_checkpoint(buf, "kind=test", tensors);
    const Checkpoint back = read_checkpoint(buf);
    CHECK(back.metadata == "kind=test");
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0] == tensors[0]);
    CHECK(back.tensors[1] == tensors[1]);
  }

  TEST_CASE("truncation and bad magic are format errors") {
    std::stringstream buf;
    write_checkpoint(buf, "m", std::vector<Matrix>{Matrix::Ones(4, 4)});
    const std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_AS(read_checkpoint(cut), FormatError);
    std::stringstream bad("NOTACKPT" + bytes.substr(8));
    CHECK_THROWS_AS(read_checkpoint(bad), FormatError);
  }
}
