#include "creid/autodiff.hpp"

#include <cmath>

#include <fmt/format.h>

namespace creid::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(fmt::format("{}: shape mismatch ({}x{} vs {}x{})", op, a.rows(),
                            a.cols(), b.rows(), b.cols()));
  }
}

}  // namespace

Var Tape::make(Mat value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw Error("Tape: invalid Var handle");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw Error("Tape: invalid Var handle");
  return nodes_[static_cast<size_t>(v.id)];
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

const Mat& Tape::value(Var v) const { return node(v).value; }

Mat Tape::grad_of(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Mat::Zero(n.value.rows(), n.value.cols());
}

Var Tape::input(Mat v) { return make(std::move(v), false); }

Var Tape::param(Parameter& p) {
  Var out = make(p.value, true);
  const int id = out.id;
  Parameter* pp = &p;
  nodes_.back().back = [this, id, pp]() {
    pp->grad += nodes_[static_cast<size_t>(id)].grad;
  };
  return out;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(value(a) + value(b), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, b, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, g);
    accumulate(b.id, g);
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(value(a) - value(b), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, b, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, g);
    accumulate(b.id, Mat(-g));
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(value(a).cwiseProduct(value(b)), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, b, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, g.cwiseProduct(value(b)));
    accumulate(b.id, g.cwiseProduct(value(a)));
  };
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  const Mat& av = value(a);
  const Mat& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw Error(fmt::format("add_rowvec: row must be 1x{}, got {}x{}", av.cols(),
                            rv.rows(), rv.cols()));
  const bool ng = node(a).needs_grad || node(row).needs_grad;
  Var out = make(av.rowwise() + rv.row(0), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, row, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, g);
    accumulate(row.id, Mat(g.colwise().sum()));
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a) * s, ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, s, oid]() {
    accumulate(a.id, Mat(nodes_[static_cast<size_t>(oid)].grad * s));
  };
  return out;
}

Var Tape::add_scalar(Var a, double s) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).array() + s, ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    accumulate(a.id, nodes_[static_cast<size_t>(oid)].grad);
  };
  return out;
}

Var Tape::relu(Var a) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).cwiseMax(0.0), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat mask = (value(a).array() > 0.0).cast<double>();
    accumulate(a.id, g.cwiseProduct(mask));
  };
  return out;
}

Var Tape::square(Var a) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).array().square(), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, Mat(2.0 * g.cwiseProduct(value(a))));
  };
  return out;
}

Var Tape::sqrt_safe(Var a) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).cwiseMax(0.0).cwiseSqrt(), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    // Guard the derivative at zero; the value itself is exact.
    const Mat denom = 2.0 * value(a).cwiseMax(1e-24).cwiseSqrt();
    accumulate(a.id, g.cwiseQuotient(denom));
  };
  return out;
}

Var Tape::log_clamped(Var a, double floor) {
  if (floor <= 0.0) throw Error("log_clamped: floor must be positive");
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).cwiseMax(floor).array().log(), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, floor, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& x = value(a);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (x(i, j) > floor) dx(i, j) = g(i, j) / x(i, j);
    accumulate(a.id, dx);
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.cols() != bv.rows())
    throw Error(fmt::format("matmul: inner dims mismatch ({}x{} * {}x{})",
                            av.rows(), av.cols(), bv.rows(), bv.cols()));
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(av * bv, ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, b, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    accumulate(a.id, Mat(g * value(b).transpose()));
    accumulate(b.id, Mat(value(a).transpose() * g));
  };
  return out;
}

Var Tape::softmax_rows(Var a) {
  const Mat& x = value(a);
  Mat s(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp();
    s.row(i) = e / e.sum();
  }
  const bool ng = node(a).needs_grad;
  Var out = make(std::move(s), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& sv = nodes_[static_cast<size_t>(oid)].value;
    Mat dx(sv.rows(), sv.cols());
    for (Eigen::Index i = 0; i < sv.rows(); ++i) {
      const double dot = g.row(i).cwiseProduct(sv.row(i)).sum();
      dx.row(i) = sv.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    accumulate(a.id, dx);
  };
  return out;
}

Var Tape::sum_rows(Var a) {
  const bool ng = node(a).needs_grad;
  Var out = make(value(a).rowwise().sum(), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;  // B x 1
    const Mat& x = value(a);
    accumulate(a.id, Mat(g * Mat::Ones(1, x.cols())));
  };
  return out;
}

Var Tape::sum_all(Var a) {
  const bool ng = node(a).needs_grad;
  Mat s(1, 1);
  s(0, 0) = value(a).sum();
  Var out = make(std::move(s), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, oid]() {
    const double g = nodes_[static_cast<size_t>(oid)].grad(0, 0);
    const Mat& x = value(a);
    accumulate(a.id, Mat(Mat::Constant(x.rows(), x.cols(), g)));
  };
  return out;
}

Var Tape::mean_all(Var a) {
  const Mat& x = value(a);
  const double n = static_cast<double>(x.size());
  if (n == 0) throw Error("mean_all: empty matrix");
  const bool ng = node(a).needs_grad;
  Mat s(1, 1);
  s(0, 0) = x.sum() / n;
  Var out = make(std::move(s), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, n, oid]() {
    const double g = nodes_[static_cast<size_t>(oid)].grad(0, 0) / n;
    const Mat& x = value(a);
    accumulate(a.id, Mat(Mat::Constant(x.rows(), x.cols(), g)));
  };
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  const Mat& x = value(a);
  Mat g(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows())
      throw Error(fmt::format("gather_rows: index {} out of range [0, {})",
                              idx[i], x.rows()));
    g.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  }
  const bool ng = node(a).needs_grad;
  Var out = make(std::move(g), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, idx = std::move(idx), oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& x = value(a);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < idx.size(); ++i)
      dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    accumulate(a.id, dx);
  };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no parts");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw Error("concat_cols: row count mismatch");
    cols += value(p).cols();
    ng = ng || node(p).needs_grad;
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    out.middleCols(off, value(p).cols()) = value(p);
    off += value(p).cols();
  }
  Var o = make(std::move(out), ng);
  if (!ng) return o;
  const int oid = o.id;
  nodes_.back().back = [this, parts, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index c = value(p).cols();
      accumulate(p.id, Mat(g.middleCols(off, c)));
      off += c;
    }
  };
  return o;
}

Var Tape::detach(Var a) {
  // Fresh leaf with the same value and no path back.
  return make(value(a), false);
}

Var Tape::reverse_grad(Var a, double mu) {
  if (mu < 0.0) throw Error("reverse_grad: mu must be >= 0");
  const bool ng = node(a).needs_grad && mu > 0.0;
  Var out = make(value(a), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, a, mu, oid]() {
    accumulate(a.id, Mat(nodes_[static_cast<size_t>(oid)].grad * (-mu)));
  };
  return out;
}

Var Tape::pool_region(Var a, const MapShape& shape, int row0, int row1) {
  const Mat& x = value(a);
  if (x.cols() != shape.size())
    throw Error(fmt::format("pool_region: map size mismatch ({} cols vs shape {})",
                            x.cols(), shape.size()));
  if (row0 < 0 || row1 > shape.height || row0 >= row1)
    throw Error(fmt::format("pool_region: bad row range [{}, {}) for height {}",
                            row0, row1, shape.height));
  const int hw = shape.height * shape.width;
  const double count = static_cast<double>((row1 - row0) * shape.width);
  Mat out = Mat::Zero(x.rows(), shape.channels);
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    for (int c = 0; c < shape.channels; ++c) {
      double s = 0.0;
      for (int y = row0; y < row1; ++y)
        for (int w = 0; w < shape.width; ++w)
          s += x(b, c * hw + y * shape.width + w);
      out(b, c) = s / count;
    }
  const bool ng = node(a).needs_grad;
  Var o = make(std::move(out), ng);
  if (!ng) return o;
  const int oid = o.id;
  nodes_.back().back = [this, a, shape, row0, row1, hw, count, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& x = value(a);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.rows(); ++b)
      for (int c = 0; c < shape.channels; ++c) {
        const double gv = g(b, c) / count;
        for (int y = row0; y < row1; ++y)
          for (int w = 0; w < shape.width; ++w)
            dx(b, c * hw + y * shape.width + w) = gv;
      }
    accumulate(a.id, dx);
  };
  return o;
}

Var Tape::conv2d(Var x, Var w, Var bias, const ConvSpec& spec) {
  const Mat& xv = value(x);
  const Mat& wv = value(w);
  const Mat& bv = value(bias);
  const int oh = spec.out_height();
  const int ow = spec.out_width();
  if (oh <= 0 || ow <= 0) throw Error("conv2d: kernel larger than input");
  if (xv.cols() != spec.in_channels * spec.in_height * spec.in_width)
    throw Error("conv2d: input column count does not match spec");
  if (wv.rows() != spec.out_channels ||
      wv.cols() != spec.in_channels * spec.kernel * spec.kernel)
    throw Error("conv2d: weight shape does not match spec");
  if (bv.rows() != 1 || bv.cols() != spec.out_channels)
    throw Error("conv2d: bias shape does not match spec");

  const int ihw = spec.in_height * spec.in_width;
  const int ohw = oh * ow;
  const int kk = spec.kernel * spec.kernel;
  Mat out(xv.rows(), spec.out_channels * ohw);
  for (Eigen::Index b = 0; b < xv.rows(); ++b) {
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double s = bv(0, oc);
          for (int ic = 0; ic < spec.in_channels; ++ic)
            for (int ky = 0; ky < spec.kernel; ++ky)
              for (int kx = 0; kx < spec.kernel; ++kx) {
                const int iy = oy * spec.stride + ky;
                const int ix = ox * spec.stride + kx;
                s += xv(b, ic * ihw + iy * spec.in_width + ix) *
                     wv(oc, ic * kk + ky * spec.kernel + kx);
              }
          out(b, oc * ohw + oy * ow + ox) = s;
        }
      }
    }
  }
  const bool ng = node(x).needs_grad || node(w).needs_grad || node(bias).needs_grad;
  Var o = make(std::move(out), ng);
  if (!ng) return o;
  const int oid = o.id;
  nodes_.back().back = [this, x, w, bias, spec, ihw, ohw, kk, oh, ow, oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& xv = value(x);
    const Mat& wv = value(w);
    Mat dx = Mat::Zero(xv.rows(), xv.cols());
    Mat dw = Mat::Zero(wv.rows(), wv.cols());
    Mat db = Mat::Zero(1, spec.out_channels);
    for (Eigen::Index b = 0; b < xv.rows(); ++b) {
      for (int oc = 0; oc < spec.out_channels; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double gv = g(b, oc * ohw + oy * ow + ox);
            if (gv == 0.0) continue;
            db(0, oc) += gv;
            for (int ic = 0; ic < spec.in_channels; ++ic)
              for (int ky = 0; ky < spec.kernel; ++ky)
                for (int kx = 0; kx < spec.kernel; ++kx) {
                  const int iy = oy * spec.stride + ky;
                  const int ix = ox * spec.stride + kx;
                  dw(oc, ic * kk + ky * spec.kernel + kx) +=
                      gv * xv(b, ic * ihw + iy * spec.in_width + ix);
                  dx(b, ic * ihw + iy * spec.in_width + ix) +=
                      gv * wv(oc, ic * kk + ky * spec.kernel + kx);
                }
          }
        }
      }
    }
    accumulate(x.id, dx);
    accumulate(w.id, dw);
    accumulate(bias.id, db);
  };
  return o;
}

Var Tape::batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats,
                    bool training, double momentum, double eps) {
  const Mat& xv = value(x);
  const Eigen::Index batch = xv.rows();
  const Eigen::Index dim = xv.cols();
  if (value(gamma).cols() != dim || value(beta).cols() != dim)
    throw Error("batchnorm: gamma/beta width mismatch");
  if (!stats.initialized) {
    stats.running_mean = Vec::Zero(dim);
    stats.running_var = Vec::Ones(dim);
    stats.initialized = true;
  }

  Vec mean(dim), var(dim);
  if (training) {
    if (batch < 2) throw Error("batchnorm: training mode needs batch >= 2");
    mean = xv.colwise().mean();
    for (Eigen::Index j = 0; j < dim; ++j)
      var(j) = (xv.col(j).array() - mean(j)).square().mean();
    stats.running_mean = (1.0 - momentum) * stats.running_mean + momentum * mean;
    stats.running_var = (1.0 - momentum) * stats.running_var + momentum * var;
  } else {
    mean = stats.running_mean;
    var = stats.running_var;
  }

  Mat xhat(batch, dim);
  Vec inv_std(dim);
  for (Eigen::Index j = 0; j < dim; ++j) {
    inv_std(j) = 1.0 / std::sqrt(var(j) + eps);
    xhat.col(j) = (xv.col(j).array() - mean(j)) * inv_std(j);
  }
  Mat y(batch, dim);
  const Mat& gv = value(gamma);
  const Mat& bvv = value(beta);
  for (Eigen::Index j = 0; j < dim; ++j)
    y.col(j) = xhat.col(j) * gv(0, j) + Vec::Constant(batch, bvv(0, j));

  const bool ng =
      node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  Var out = make(std::move(y), ng);
  if (!ng) return out;
  const int oid = out.id;
  nodes_.back().back = [this, x, gamma, beta, xhat = std::move(xhat),
                        inv_std = std::move(inv_std), training, batch, dim,
                        oid]() {
    const Mat& g = nodes_[static_cast<size_t>(oid)].grad;
    const Mat& gv = value(gamma);
    Mat dgamma(1, dim), dbeta(1, dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
      dgamma(0, j) = g.col(j).cwiseProduct(xhat.col(j)).sum();
      dbeta(0, j) = g.col(j).sum();
    }
    Mat dx(batch, dim);
    if (training) {
      // Batch statistics participate in the graph.
      for (Eigen::Index j = 0; j < dim; ++j) {
        const double mean_g = g.col(j).mean();
        const double mean_gx = g.col(j).cwiseProduct(xhat.col(j)).mean();
        dx.col(j) = gv(0, j) * inv_std(j) *
                    (g.col(j).array() - mean_g - xhat.col(j).array() * mean_gx)
                        .matrix();
      }
    } else {
      for (Eigen::Index j = 0; j < dim; ++j)
        dx.col(j) = gv(0, j) * inv_std(j) * g.col(j);
    }
    accumulate(x.id, dx);
    accumulate(gamma.id, dgamma);
    accumulate(beta.id, dbeta);
  };
  return out;
}

void Tape::backward(Var out) {
  Node& o = node(out);
  if (o.value.rows() != 1 || o.value.cols() != 1)
    throw Error("backward: output must be a 1x1 scalar");
  o.grad = Mat::Ones(1, 1);
  o.has_grad = true;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.has_grad && n.back) n.back();
  }
}

}  // namespace creid::ad
