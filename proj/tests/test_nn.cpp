#include <doctest.h>

#include "creid/nn.hpp"
#include "test_support.hpp"

using namespace creid;
using creid::testing::random_matrix;

TEST_CASE("sgd applies exactly value -= lr * grad") {
  ad::Parameter p("p", Mat::Ones(2, 2));
  p.grad = Mat::Constant(2, 2, 3.0);
  nn::Sgd opt({&p}, 0.5);
  opt.step();
  CHECK((p.value - Mat::Constant(2, 2, -0.5)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  ad::Parameter p("p", Mat::Constant(1, 1, 5.0));
  nn::Adam opt({&p}, 0.1);
  for (int i = 0; i < 500; ++i) {
    p.zero_grad();
    p.grad(0, 0) = 2.0 * (p.value(0, 0) - 1.5);
    opt.step();
  }
  CHECK(p.value(0, 0) == doctest::Approx(1.5).epsilon(1e-3));
}

TEST_CASE("optimizer steps are deterministic") {
  auto run = [] {
    Rng rng(5);
    ad::Parameter p("p", random_matrix(rng, 3, 3));
    nn::Adam opt({&p}, 0.01);
    for (int i = 0; i < 20; ++i) {
      p.zero_grad();
      p.grad = p.value * 0.3;
      opt.step();
    }
    return Mat(p.value);
  };
  CHECK(run() == run());
}

TEST_CASE("linear layer computes x*W + b") {
  Rng rng(3);
  nn::Linear lin("l", 3, 2, rng);
  const Mat x = random_matrix(rng, 4, 3);
  ad::Tape t;
  const Mat y = t.value(lin.forward(t, t.input(x)));
  const Mat expected = (x * lin.weight.value).rowwise() + lin.bias.value.row(0);
  CHECK((y - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("batchnorm training normalizes and tracks running statistics") {
  nn::BatchNorm1d bn("bn", 2);
  Mat x(4, 2);
  x << 1, 10, 2, 20, 3, 30, 4, 40;
  ad::Tape t;
  const Mat y = t.value(bn.forward(t, t.input(x), true));
  for (Eigen::Index j = 0; j < 2; ++j) {
    CHECK(y.col(j).mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((y.col(j).array().square().mean()) == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(bn.stats.running_mean(0) == doctest::Approx(0.1 * 2.5));

  // update_running = false keeps statistics frozen.
  const Vec before = bn.stats.running_mean;
  ad::Tape t2;
  bn.forward(t2, t2.input(x), true, /*update_running=*/false);
  CHECK(bn.stats.running_mean == before);
}

TEST_CASE("frozen layer forwards route no gradient to parameters") {
  Rng rng(9);
  nn::Linear lin("l", 3, 3, rng);
  const Mat x = random_matrix(rng, 4, 3);
  lin.weight.zero_grad();
  ad::Tape t;
  ad::Var in = t.input(x);
  t.backward(t.mean_all(t.square(lin.forward_frozen(t, in))));
  CHECK(lin.weight.grad.cwiseAbs().maxCoeff() == 0.0);
}
