#include <doctest.h>

#include "creid/autodiff.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace creid;
using creid::testing::fd_wrt;
using creid::testing::grads_agree;
using creid::testing::random_matrix;

namespace {

// Finite-difference check of every parameter entry of `p` against autodiff.
void check_param_grads(ad::Parameter& p,
                       const std::function<double()>& loss_value,
                       const std::function<void()>& backward_into_p,
                       double tol = 1e-3) {
  p.zero_grad();
  backward_into_p();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double numeric = fd_wrt(loss_value, p.value(i, j));
      CAPTURE(i);
      CAPTURE(j);
      CHECK(grads_agree(p.grad(i, j), numeric, tol));
    }
}

}  // namespace

TEST_CASE("matmul/add/bias chain matches finite differences") {
  Rng rng(42);
  ad::Parameter w("w", random_matrix(rng, 3, 4));
  ad::Parameter b("b", random_matrix(rng, 1, 4));
  const Mat x = random_matrix(rng, 5, 3);

  auto loss = [&]() {
    ad::Tape t;
    ad::Var out = t.add_rowvec(t.matmul(t.input(x), t.param(w)), t.param(b));
    return t.value(t.mean_all(t.square(out)))(0, 0);
  };
  auto backward = [&]() {
    ad::Tape t;
    ad::Var out = t.add_rowvec(t.matmul(t.input(x), t.param(w)), t.param(b));
    t.backward(t.mean_all(t.square(out)));
  };
  check_param_grads(w, loss, backward);
  check_param_grads(b, loss, backward);
}

TEST_CASE("relu, sqrt_safe, log_clamped, softmax gradients") {
  Rng rng(7);
  ad::Parameter w("w", random_matrix(rng, 4, 4));
  const Mat x = random_matrix(rng, 6, 4);

  auto build = [&](ad::Tape& t) {
    ad::Var h = t.matmul(t.input(x), t.param(w));
    ad::Var r = t.relu(h);
    ad::Var s = t.softmax_rows(t.add_scalar(r, 0.1));
    ad::Var lg = t.log_clamped(s, 1e-12);
    ad::Var q = t.sqrt_safe(t.add_scalar(t.square(lg), 0.3));
    return t.mean_all(q);
  };
  auto loss = [&]() {
    ad::Tape t;
    return t.value(build(t))(0, 0);
  };
  auto backward = [&]() {
    ad::Tape t;
    t.backward(build(t));
  };
  check_param_grads(w, loss, backward);
}

TEST_CASE("gather_rows and concat_cols gradients") {
  Rng rng(11);
  ad::Parameter w("w", random_matrix(rng, 3, 3));
  const Mat x = random_matrix(rng, 5, 3);
  const std::vector<int> idx = {4, 0, 0, 2, 1};

  auto build = [&](ad::Tape& t) {
    ad::Var h = t.matmul(t.input(x), t.param(w));
    ad::Var g = t.gather_rows(h, idx);
    ad::Var c = t.concat_cols({h, g});
    return t.mean_all(t.mul(c, c));
  };
  auto loss = [&]() {
    ad::Tape t;
    return t.value(build(t))(0, 0);
  };
  auto backward = [&]() {
    ad::Tape t;
    t.backward(build(t));
  };
  check_param_grads(w, loss, backward);
}

TEST_CASE("conv2d and pool_region gradients") {
  Rng rng(13);
  ad::ConvSpec spec{2, 3, 6, 4, 2, 2};
  ad::Parameter w("w", random_matrix(rng, 3, 2 * 2 * 2, 0.5));
  ad::Parameter b("b", random_matrix(rng, 1, 3, 0.1));
  const Mat x = random_matrix(rng, 3, 2 * 6 * 4);
  const ad::MapShape shape{spec.out_height(), spec.out_width(), 3};

  auto build = [&](ad::Tape& t) {
    ad::Var y = t.conv2d(t.input(x), t.param(w), t.param(b), spec);
    ad::Var pooled = t.pool_region(y, shape, 0, shape.height / 2);
    return t.mean_all(t.square(pooled));
  };
  auto loss = [&]() {
    ad::Tape t;
    return t.value(build(t))(0, 0);
  };
  auto backward = [&]() {
    ad::Tape t;
    t.backward(build(t));
  };
  check_param_grads(w, loss, backward);
  check_param_grads(b, loss, backward);
}

TEST_CASE("batchnorm gradients in training mode") {
  Rng rng(17);
  ad::Parameter gamma("g", Mat::Ones(1, 3) + 0.1 * random_matrix(rng, 1, 3));
  ad::Parameter beta("b", 0.1 * random_matrix(rng, 1, 3));
  ad::Parameter w("w", random_matrix(rng, 4, 3));
  const Mat x = random_matrix(rng, 8, 4);

  auto build = [&](ad::Tape& t, ad::BatchNormStats& stats) {
    ad::Var h = t.matmul(t.input(x), t.param(w));
    ad::Var y = t.batchnorm(h, t.param(gamma), t.param(beta), stats, true, 0.0);
    return t.mean_all(t.square(t.relu(y)));
  };
  auto loss = [&]() {
    ad::Tape t;
    ad::BatchNormStats stats;
    return t.value(build(t, stats))(0, 0);
  };
  auto backward = [&]() {
    ad::Tape t;
    ad::BatchNormStats stats;
    t.backward(build(t, stats));
  };
  check_param_grads(w, loss, backward);
  check_param_grads(gamma, loss, backward);
  check_param_grads(beta, loss, backward);
}

TEST_CASE("detach blocks gradient exactly") {
  Rng rng(19);
  ad::Parameter w("w", random_matrix(rng, 3, 3));
  const Mat x = random_matrix(rng, 4, 3);
  ad::Tape t;
  ad::Var h = t.matmul(t.input(x), t.param(w));
  ad::Var d = t.detach(h);
  ad::Var out = t.mean_all(t.square(d));
  w.zero_grad();
  t.backward(out);
  CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reverse_grad scales and negates the incoming gradient") {
  Rng rng(23);
  ad::Parameter w("w", random_matrix(rng, 3, 3));
  const Mat x = random_matrix(rng, 4, 3);
  const double mu = 0.37;

  auto grad_with = [&](bool reversed) {
    w.zero_grad();
    ad::Tape t;
    ad::Var h = t.matmul(t.input(x), t.param(w));
    ad::Var r = reversed ? t.reverse_grad(h, mu) : h;
    t.backward(t.mean_all(t.square(r)));
    return Mat(w.grad);
  };
  const Mat plain = grad_with(false);
  const Mat reversed = grad_with(true);
  CHECK((reversed + mu * plain).cwiseAbs().maxCoeff() < 1e-12);

  // mu = 0 blocks the path entirely.
  w.zero_grad();
  ad::Tape t;
  ad::Var h = t.matmul(t.input(x), t.param(w));
  t.backward(t.mean_all(t.square(t.reverse_grad(h, 0.0))));
  CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  // f(w) = sum(w*x) + sum(w*x) should produce twice the single-path gradient.
  Rng rng(29);
  ad::Parameter w("w", random_matrix(rng, 2, 2));
  const Mat x = random_matrix(rng, 2, 2);

  w.zero_grad();
  ad::Tape t;
  ad::Var h = t.matmul(t.input(x), t.param(w));
  ad::Var s = t.add(t.sum_all(h), t.sum_all(h));
  t.backward(s);
  const Mat twice = w.grad;

  w.zero_grad();
  ad::Tape t2;
  ad::Var h2 = t2.matmul(t2.input(x), t2.param(w));
  t2.backward(t2.sum_all(h2));
  CHECK((twice - 2.0 * w.grad).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward requires a scalar output") {
  ad::Tape t;
  ad::Var v = t.input(Mat::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(v), Error);
}

TEST_CASE("eval-mode batchnorm uses running statistics") {
  ad::BatchNormStats stats;
  stats.running_mean = Vec::Constant(2, 1.0);
  stats.running_var = Vec::Constant(2, 4.0);
  stats.initialized = true;
  ad::Tape t;
  ad::Parameter gamma("g", Mat::Ones(1, 2));
  ad::Parameter beta("b", Mat::Zero(1, 2));
  Mat x(1, 2);
  x << 3.0, 5.0;
  ad::Var y = t.batchnorm(t.input(x), t.param(gamma), t.param(beta), stats,
                          false, 0.1);
  // (x - 1) / sqrt(4 + eps)
  CHECK(t.value(y)(0, 0) == doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
  CHECK(t.value(y)(0, 1) == doctest::Approx((5.0 - 1.0) / std::sqrt(4.0 + 1e-5)));
}
