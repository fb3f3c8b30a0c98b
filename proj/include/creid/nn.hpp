#pragma once

#include "creid/autodiff.hpp"
#include "creid/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace creid::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

Mat he_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  // weight_scale < 0 selects He initialization; otherwise N(0, weight_scale).
  Linear(const std::string& name, int in, int out, Rng& rng,
         double weight_scale = -1.0);

  Var forward(Tape& t, Var x) {
    return t.add_rowvec(t.matmul(x, t.param(weight)), t.param(bias));
  }
  // Frozen forward: parameters enter the tape as constants.
  Var forward_frozen(Tape& t, Var x) const {
    return t.add_rowvec(t.matmul(x, t.input(weight.value)), t.input(bias.value));
  }

  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct BatchNorm1d {
  Parameter gamma;  // 1 x dim
  Parameter beta;   // 1 x dim
  ad::BatchNormStats stats;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm1d() = default;
  BatchNorm1d(const std::string& name, int dim);

  // `update_running` only matters in training mode; frozen passes keep batch
  // statistics but leave the running averages untouched.
  Var forward(Tape& t, Var x, bool training, bool update_running = true);
  Var forward_frozen(Tape& t, Var x, bool training);

  std::vector<Parameter*> parameters() { return {&gamma, &beta}; }
};

struct Conv2d {
  Parameter weight;  // outC x inC*k*k
  Parameter bias;    // 1 x outC
  ad::ConvSpec spec;

  Conv2d() = default;
  Conv2d(const std::string& name, const ad::ConvSpec& spec, Rng& rng);

  Var forward(Tape& t, Var x) {
    return t.conv2d(x, t.param(weight), t.param(bias), spec);
  }

  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

class Optimizer {
 public:
  explicit Optimizer(std::vector<Parameter*> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 protected:
  std::vector<Parameter*> params_;
  double lr_ = 1e-3;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<Parameter*> params, double lr) : Optimizer(std::move(params)) {
    lr_ = lr;
  }
  void step() override;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step() override;

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& name,
                                          std::vector<Parameter*> params,
                                          double lr);

}  // namespace creid::nn
