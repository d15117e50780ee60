#include "panoloc/attention.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace panoloc {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

}  // namespace

Tensor se_squeeze(const Tensor& u) {
  if (u.rank() < 2) throw std::invalid_argument("se_squeeze: expected C x spatial map");
  const long C = u.dim(0);
  long spatial = 1;
  for (int i = 1; i < u.rank(); ++i) spatial *= u.dim(i);
  if (spatial == 0) throw std::invalid_argument("se_squeeze: empty spatial dimensions");
  Tensor z({C});
  for (long c = 0; c < C; ++c) {
    const double* p = u.data() + c * spatial;
    double sum = 0.0;
    for (long i = 0; i < spatial; ++i) sum += p[i];
    z[c] = sum / static_cast<double>(spatial);
  }
  return z;
}

Tensor se_excite(const Tensor& z, const Tensor& w1, const Tensor& w2) {
  const long C = z.numel();
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != C || w2.dim(0) != C ||
      w1.dim(0) != w2.dim(1)) {
    throw std::invalid_argument("se_excite: weight dimensions inconsistent with descriptor");
  }
  const long hidden = w1.dim(0);
  ConstMatMap w1m(w1.data(), hidden, C);
  ConstMatMap w2m(w2.data(), C, hidden);
  ConstVecMap zv(z.data(), C);
  Eigen::VectorXd h = (w1m * zv).cwiseMax(0.0);
  Eigen::VectorXd pre = w2m * h;
  Tensor s({C});
  for (long c = 0; c < C; ++c) s[c] = sigmoid(pre[c]);
  return s;
}

Tensor se_recalibrate(const Tensor& u, const Tensor& s) {
  if (s.numel() != u.dim(0)) {
    throw std::invalid_argument("se_recalibrate: scale length does not match channel count");
  }
  const long C = u.dim(0);
  long spatial = 1;
  for (int i = 1; i < u.rank(); ++i) spatial *= u.dim(i);
  Tensor y(u.shape());
  for (long c = 0; c < C; ++c) {
    const double* p = u.data() + c * spatial;
    double* o = y.data() + c * spatial;
    const double sc = s[c];
    for (long i = 0; i < spatial; ++i) o[i] = sc * p[i];
  }
  return y;
}

SEBlock::SEBlock(long channels, long reduction, bool enabled)
    : channels_(channels), reduction_(reduction), enabled_(enabled) {
  if (reduction <= 0 || channels % reduction != 0) {
    throw std::invalid_argument("SEBlock: reduction ratio must divide channel count");
  }
  hidden_ = channels / reduction;
  w1.setup({hidden_, channels_});
  w2.setup({channels_, hidden_});
}

void SEBlock::init(std::mt19937_64& rng) {
  std::normal_distribution<double> d1(0.0, std::sqrt(2.0 / static_cast<double>(channels_)));
  std::normal_distribution<double> d2(0.0, std::sqrt(2.0 / static_cast<double>(hidden_)));
  for (double& v : w1.value.raw()) v = d1(rng);
  for (double& v : w2.value.raw()) v = d2(rng);
}

void SEBlock::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "w1", &w1.value, &w1.grad});
  out.push_back({prefix + "w2", &w2.value, &w2.grad});
}

Tensor SEBlock::forward(const Tensor& x) {
  if (!enabled_) return x;
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw std::invalid_argument("SEBlock: expected B x C x H x W input with C = " +
                                std::to_string(channels_));
  }
  const long B = x.dim(0), C = channels_;
  const long spatial = x.dim(2) * x.dim(3);

  z_.resize({B, C});
  h_.resize({B, hidden_});
  s_.resize({B, C});
  Tensor y(x.shape());

  ConstMatMap w1m(w1.value.data(), hidden_, C);
  ConstMatMap w2m(w2.value.data(), C, hidden_);
  for (long b = 0; b < B; ++b) {
    for (long c = 0; c < C; ++c) {
      const double* p = x.data() + (b * C + c) * spatial;
      double sum = 0.0;
      for (long i = 0; i < spatial; ++i) sum += p[i];
      z_(b, c) = sum / static_cast<double>(spatial);
    }
    ConstVecMap zv(z_.data() + b * C, C);
    VecMap hv(h_.data() + b * hidden_, hidden_);
    hv = (w1m * zv).cwiseMax(0.0);
    Eigen::VectorXd pre = w2m * hv;
    for (long c = 0; c < C; ++c) {
      const double sc = sigmoid(pre[c]);
      s_(b, c) = sc;
      const double* p = x.data() + (b * C + c) * spatial;
      double* o = y.data() + (b * C + c) * spatial;
      for (long i = 0; i < spatial; ++i) o[i] = sc * p[i];
    }
  }
  cached_input_ = x;
  return y;
}

Tensor SEBlock::backward(const Tensor& gy) {
  if (!enabled_) return gy;
  const Tensor& x = cached_input_;
  check_shape(gy, x.shape(), "SEBlock::backward");
  const long B = x.dim(0), C = channels_;
  const long spatial = x.dim(2) * x.dim(3);

  Tensor dx(x.shape());
  ConstMatMap w1m(w1.value.data(), hidden_, C);
  ConstMatMap w2m(w2.value.data(), C, hidden_);
  Eigen::Map<RowMat> dw1(w1.grad.data(), hidden_, C);
  Eigen::Map<RowMat> dw2(w2.grad.data(), C, hidden_);

  for (long b = 0; b < B; ++b) {
    // Gradient w.r.t. the gate and the direct rescaling path.
    Eigen::VectorXd ds(C);
    for (long c = 0; c < C; ++c) {
      const double* g = gy.data() + (b * C + c) * spatial;
      const double* p = x.data() + (b * C + c) * spatial;
      double* d = dx.data() + (b * C + c) * spatial;
      const double sc = s_(b, c);
      double acc = 0.0;
      for (long i = 0; i < spatial; ++i) {
        acc += g[i] * p[i];
        d[i] = g[i] * sc;
      }
      ds[c] = acc * sc * (1.0 - sc);  // through the sigmoid
    }
    ConstVecMap hv(h_.data() + b * hidden_, hidden_);
    ConstVecMap zv(z_.data() + b * C, C);
    dw2.noalias() += ds * hv.transpose();
    Eigen::VectorXd dh = w2m.transpose() * ds;
    for (long j = 0; j < hidden_; ++j) {
      if (hv[j] <= 0.0) dh[j] = 0.0;
    }
    dw1.noalias() += dh * zv.transpose();
    Eigen::VectorXd dz = w1m.transpose() * dh;
    const double inv_spatial = 1.0 / static_cast<double>(spatial);
    for (long c = 0; c < C; ++c) {
      double* d = dx.data() + (b * C + c) * spatial;
      const double add = dz[c] * inv_spatial;
      for (long i = 0; i < spatial; ++i) d[i] += add;
    }
  }
  return dx;
}

}  // namespace panoloc
