#include "vigl/errors.hpp"
#include "vigl/nn.hpp"
#include "vigl/oracle.hpp"

#include <doctest.h>

#include <random>

using namespace vigl;

TEST_CASE("activation tags round-trip and reject unknown names") {
  for (Activation a : {Activation::kIdentity, Activation::kRelu, Activation::kSigmoid, Activation::kTanh}) {
    CHECK(parse_activation(to_string(a)) == a);
  }
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("tower net routes each segment to its own encoder") {
  std::mt19937_64 rng(7);
  const NetShape shape{8, 4, 6, Activation::kTanh};
  TowerNet net({{3, true}, {2, false}, {5, true}}, 1, shape, rng);
  CHECK(net.input_dim() == 10);
  CHECK(net.output_dim() == 1);
  // Two encoders (2 layers each) and a head with one hidden layer.
  CHECK(net.parameters().size() == 4 + 4 + 4);

  Matrix x = Matrix::Random(6, 10);
  const Matrix base = net.forward(Tensor::constant(x)).value();
  // Changing a column of the raw segment must change the output; the raw
  // segment feeds the head directly.
  x(0, 3) += 1.0;
  const Matrix moved = net.forward(Tensor::constant(x)).value();
  CHECK(moved(0, 0) != base(0, 0));
  CHECK(moved.bottomRows(5) == base.bottomRows(5));
  CHECK_THROWS_AS(net.forward(Tensor::constant(Matrix::Zero(2, 9))), ShapeError);
}

TEST_CASE("head_hidden = 0 gives a linear head") {
  std::mt19937_64 rng(1);
  TowerNet net({{4, true}}, 3, {8, 4, 0, Activation::kTanh}, rng);
  CHECK(net.parameters().size() == 4 + 2);
  CHECK(net.output_dim() == 3);
}

TEST_CASE("tower net gradients pass gradcheck") {
  std::mt19937_64 rng(5);
  TowerNet net({{3, true}, {2, false}, {1, false}}, 1, {6, 3, 5, Activation::kTanh}, rng);
  const Tensor x = Tensor::constant(Matrix::Random(9, 6));
  const auto params = net.parameters();
  auto loss = [&] { return mean(square(net.forward(x))); };
  CHECK(oracle::gradcheck_parameters(params, loss).max_error < 1e-4);
}

TEST_CASE("optimizer skips parameters that never received a gradient") {
  Tensor a = Tensor::parameter(Matrix::Constant(1, 1, 1.0));
  Tensor b = Tensor::parameter(Matrix::Constant(1, 1, 5.0));
  Optimizer opt({OptimizerMethod::kAdam, 0.1}, {a, b});
  backward(square(a));
  opt.step(Direction::kDescent);
  CHECK(a.value()(0, 0) < 1.0);
  CHECK(b.value()(0, 0) == 5.0);
}

TEST_CASE("flat parameter views round-trip") {
  std::mt19937_64 rng(2);
  const int dims[] = {2, 3, 1};
  const Activation acts[] = {Activation::kTanh, Activation::kIdentity};
  Mlp net(dims, acts, rng);
  const auto params = net.parameters();
  std::vector<double> flat = flatten_values(params);
  CHECK(flat.size() == 2 * 3 + 3 + 3 + 1);
  for (double& v : flat) v += 1.0;
  assign_flat(params, flat);
  CHECK(flatten_values(params) == flat);
  const auto saved = snapshot(params);
  for (double& v : flat) v = 0.0;
  assign_flat(params, flat);
  restore(params, saved);
  CHECK(snapshot(params)[0] == saved[0]);
}
