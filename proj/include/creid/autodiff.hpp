#pragma once

#include "creid/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace creid::ad {

// Handle into a Tape. Cheap to copy; only meaningful for the tape that
// created it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// A persistent trainable tensor. Gradients accumulate into `grad` across
// backward passes until zero_grad() is called.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

// Layout of a spatial feature map flattened into one row per sample:
// index = c * (height * width) + y * width + x  (channel-planar).
struct MapShape {
  int height = 0;
  int width = 0;
  int channels = 0;
  int size() const { return height * width * channels; }
  bool operator==(const MapShape&) const = default;
};

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int kernel = 1;
  int stride = 1;
  int out_height() const { return (in_height - kernel) / stride + 1; }
  int out_width() const { return (in_width - kernel) / stride + 1; }
};

// Running statistics for batch normalization, owned by the layer.
struct BatchNormStats {
  Vec running_mean;
  Vec running_var;
  bool initialized = false;
};

// Reverse-mode autodiff tape over Eigen double matrices. A tape records one
// forward computation; backward() walks it in reverse. Tapes are single-use
// and single-threaded; parameters outlive them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var input(Mat v);            // constant; never receives gradient
  Var param(Parameter& p);     // gradient accumulates into p.grad

  // Elementwise / broadcast arithmetic.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_rowvec(Var a, Var row);  // a (B x n) + row (1 x n) broadcast
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var square(Var a);
  Var sqrt_safe(Var a);                        // d/dx guarded near zero
  Var log_clamped(Var a, double floor);        // log(max(a, floor))

  // Linear algebra / reductions.
  Var matmul(Var a, Var b);
  Var softmax_rows(Var a);
  Var sum_rows(Var a);   // (B x n) -> (B x 1)
  Var sum_all(Var a);    // -> (1 x 1)
  Var mean_all(Var a);   // -> (1 x 1)

  // Structure.
  Var gather_rows(Var a, std::vector<int> idx);
  Var concat_cols(const std::vector<Var>& parts);

  // Gradient routing.
  Var detach(Var a);                  // identity; blocks all gradient flow
  Var reverse_grad(Var a, double mu); // identity; backward multiplies by -mu

  // Neural-net ops.
  // Average-pool rows [row0, row1) of a flattened spatial map, per channel.
  Var pool_region(Var a, const MapShape& shape, int row0, int row1);
  // x: (B x inC*H*W), w: (outC x inC*k*k), bias: (1 x outC).
  Var conv2d(Var x, Var w, Var bias, const ConvSpec& spec);
  // Batch normalization over the batch dimension, per column.
  // Training mode uses batch statistics and updates `stats`; eval mode uses
  // the stored running statistics.
  Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats,
                bool training, double momentum = 0.1, double eps = 1e-5);

  // Seeds d(out)=1 and propagates. `out` must be 1x1.
  void backward(Var out);

  const Mat& value(Var v) const;
  // Gradient w.r.t. an intermediate node, after backward(). Zero matrix if
  // no gradient reached it.
  Mat grad_of(Var v) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    bool needs_grad = false;           // any path to a Parameter or watched leaf
    std::function<void()> back;        // may be empty (leaves)
  };

  std::vector<Node> nodes_;

  Var make(Mat value, bool needs_grad, std::function<void()> back = {});
  void accumulate(int id, const Mat& g);
  Node& node(Var v);
  const Node& node(Var v) const;
};

}  // namespace creid::ad
