#include "creid/nn.hpp"

#include <cmath>

#include <fmt/format.h>

namespace creid::nn {

Mat he_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in) {
  const double sd = std::sqrt(2.0 / fan_in);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, sd);
  return m;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng,
               double weight_scale) {
  Mat w(in, out);
  if (weight_scale < 0.0) {
    w = he_normal(rng, in, out, static_cast<double>(in));
  } else {
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = rng.normal(0.0, weight_scale);
  }
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", Mat::Zero(1, out));
}

BatchNorm1d::BatchNorm1d(const std::string& name, int dim) {
  gamma = Parameter(name + ".gamma", Mat::Ones(1, dim));
  beta = Parameter(name + ".beta", Mat::Zero(1, dim));
}

Var BatchNorm1d::forward(Tape& t, Var x, bool training, bool update_running) {
  // Momentum 0 keeps the running statistics unchanged while still using batch
  // statistics in training mode.
  const double mom = (training && update_running) ? momentum : 0.0;
  return t.batchnorm(x, t.param(gamma), t.param(beta), stats, training, mom, eps);
}

Var BatchNorm1d::forward_frozen(Tape& t, Var x, bool training) {
  ad::BatchNormStats scratch = stats;
  Var out = t.batchnorm(x, t.input(gamma.value), t.input(beta.value), scratch,
                        training, 0.0, eps);
  return out;
}

Conv2d::Conv2d(const std::string& name, const ad::ConvSpec& s, Rng& rng) {
  spec = s;
  const double fan_in = static_cast<double>(s.in_channels * s.kernel * s.kernel);
  weight = Parameter(name + ".weight",
                     he_normal(rng, s.out_channels,
                               s.in_channels * s.kernel * s.kernel, fan_in));
  bias = Parameter(name + ".bias", Mat::Zero(1, s.out_channels));
}

void Sgd::step() {
  for (auto* p : params_) p->value -= lr_ * p->grad;
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2,
           double eps)
    : Optimizer(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  lr_ = lr;
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto* p : params_) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    p->value -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name,
                                          std::vector<Parameter*> params,
                                          double lr) {
  if (name == "sgd") return std::make_unique<Sgd>(std::move(params), lr);
  if (name == "adam") return std::make_unique<Adam>(std::move(params), lr);
  throw Error(fmt::format("unknown optimizer '{}'", name));
}

}  // namespace creid::nn
