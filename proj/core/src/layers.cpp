#include "panoloc/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace panoloc {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(long in_ch, long out_ch, long kernel, long stride, Sampling mode, bool with_bias)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), mode_(mode),
      with_bias_(with_bias) {
  if (kernel % 2 == 0) throw std::invalid_argument("Conv2d: kernel size must be odd");
  if (stride != 1 && stride != 2) throw std::invalid_argument("Conv2d: stride must be 1 or 2");
  weight.setup({out_ch_, in_ch_, k_, k_});
  if (with_bias_) bias.setup({out_ch_});
}

void Conv2d::init_kaiming(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_ch_ * k_ * k_);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : weight.value.raw()) v = dist(rng);
  if (with_bias_) bias.value.zero();
}

void Conv2d::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "weight", &weight.value, &weight.grad});
  if (with_bias_) out.push_back({prefix + "bias", &bias.value, &bias.grad});
}

namespace {

// Corner indices/weights of one grid tap for a whole output row: since grid
// taps in a row differ only by an integer column shift, the bilinear weights
// and the row pair are shared; only the column indices advance.
struct RowTap {
  long r0, r1, c0_base;
  double w00, w01, w10, w11;
};

RowTap make_row_tap(const SamplingGrid& grid, long H, long W, long ir, long ti, long tj) {
  const double row = grid.row_coord(ir, ti, tj);
  double u = std::fmod(grid.col_shift(ir, ti, tj), static_cast<double>(W));
  if (u < 0) u += static_cast<double>(W);
  if (u >= static_cast<double>(W)) u = 0.0;
  const long c0 = static_cast<long>(std::floor(u));
  const double tc = u - static_cast<double>(c0);
  const double rf = std::floor(row);
  const double tr = row - rf;
  long r0 = static_cast<long>(rf);
  long r1 = r0 + 1;
  if (r0 < 0) r0 = 0;
  if (r0 > H - 1) r0 = H - 1;
  if (r1 < 0) r1 = 0;
  if (r1 > H - 1) r1 = H - 1;
  return {r0, r1, c0, (1.0 - tr) * (1.0 - tc), (1.0 - tr) * tc, tr * (1.0 - tc), tr * tc};
}

}  // namespace

// Fills cols[in_ch*k*k, OH*OW] for one item. Planar mode zero-pads; spherical
// mode interpolates the grid taps of input pixel (r*stride, c*stride).
void Conv2d::gather_columns(const double* x, long H, long W, long OH, long OW,
                            double* cols) const {
  const long pad = k_ / 2;
  const long plane = H * W;
  const long ncols = OH * OW;
  if (mode_ == Sampling::kPlanar) {
    for (long ic = 0; ic < in_ch_; ++ic) {
      const double* src = x + ic * plane;
      for (long ti = 0; ti < k_; ++ti) {
        for (long tj = 0; tj < k_; ++tj) {
          double* dst = cols + ((ic * k_ + ti) * k_ + tj) * ncols;
          for (long r = 0; r < OH; ++r) {
            const long ir = r * stride_ - pad + ti;
            if (ir < 0 || ir >= H) {
              std::fill(dst, dst + OW, 0.0);
              dst += OW;
              continue;
            }
            const double* row = src + ir * W;
            for (long c = 0; c < OW; ++c) {
              const long jc = c * stride_ - pad + tj;
              *dst++ = (jc < 0 || jc >= W) ? 0.0 : row[jc];
            }
          }
        }
      }
    }
  } else {
    for (long ic = 0; ic < in_ch_; ++ic) {
      const double* src = x + ic * plane;
      for (long ti = 0; ti < k_; ++ti) {
        for (long tj = 0; tj < k_; ++tj) {
          double* dst = cols + ((ic * k_ + ti) * k_ + tj) * ncols;
          for (long r = 0; r < OH; ++r) {
            const RowTap t = make_row_tap(*grid_, H, W, r * stride_, ti, tj);
            const double* row0 = src + t.r0 * W;
            const double* row1 = src + t.r1 * W;
            for (long c = 0; c < OW; ++c) {
              long c0 = t.c0_base + c * stride_;
              if (c0 >= W) c0 -= W;
              long c1 = c0 + 1;
              if (c1 == W) c1 = 0;
              *dst++ = t.w00 * row0[c0] + t.w01 * row0[c1] + t.w10 * row1[c0] + t.w11 * row1[c1];
            }
          }
        }
      }
    }
  }
}

void Conv2d::scatter_columns(const double* dcols, long H, long W, long OH, long OW,
                             double* dx) const {
  const long pad = k_ / 2;
  const long plane = H * W;
  const long ncols = OH * OW;
  if (mode_ == Sampling::kPlanar) {
    for (long ic = 0; ic < in_ch_; ++ic) {
      double* dst = dx + ic * plane;
      for (long ti = 0; ti < k_; ++ti) {
        for (long tj = 0; tj < k_; ++tj) {
          const double* src = dcols + ((ic * k_ + ti) * k_ + tj) * ncols;
          for (long r = 0; r < OH; ++r) {
            const long ir = r * stride_ - pad + ti;
            if (ir < 0 || ir >= H) {
              src += OW;
              continue;
            }
            double* row = dst + ir * W;
            for (long c = 0; c < OW; ++c) {
              const long jc = c * stride_ - pad + tj;
              if (jc >= 0 && jc < W) row[jc] += src[c];
            }
            src += OW;
          }
        }
      }
    }
  } else {
    for (long ic = 0; ic < in_ch_; ++ic) {
      double* dst = dx + ic * plane;
      for (long ti = 0; ti < k_; ++ti) {
        for (long tj = 0; tj < k_; ++tj) {
          const double* src = dcols + ((ic * k_ + ti) * k_ + tj) * ncols;
          for (long r = 0; r < OH; ++r) {
            const RowTap t = make_row_tap(*grid_, H, W, r * stride_, ti, tj);
            double* row0 = dst + t.r0 * W;
            double* row1 = dst + t.r1 * W;
            for (long c = 0; c < OW; ++c) {
              const double g = src[c];
              if (g == 0.0) continue;
              long c0 = t.c0_base + c * stride_;
              if (c0 >= W) c0 -= W;
              long c1 = c0 + 1;
              if (c1 == W) c1 = 0;
              row0[c0] += g * t.w00;
              row0[c1] += g * t.w01;
              row1[c0] += g * t.w10;
              row1[c1] += g * t.w11;
            }
            src += OW;
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("Conv2d: expected B x C x H x W input");
  if (x.dim(1) != in_ch_) {
    throw std::invalid_argument("Conv2d: input has " + std::to_string(x.dim(1)) +
                                " channels, weights expect " + std::to_string(in_ch_));
  }
  const long B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const long OH = out_size(H), OW = out_size(W);
  if (mode_ == Sampling::kSpherical) grid_ = GridCache::instance().get(H, W, k_, k_);
  const bool pointwise = k_ == 1 && stride_ == 1 && mode_ == Sampling::kPlanar;

  Tensor y({B, out_ch_, OH, OW});
  const long krows = in_ch_ * k_ * k_;
  ConstMatMap wmat(weight.value.data(), out_ch_, krows);
  cached_cols_.clear();
  Tensor cols;
  if (!pointwise) cols.resize({krows, OH * OW});
  for (long b = 0; b < B; ++b) {
    MatMap ymat(y.data() + b * out_ch_ * OH * OW, out_ch_, OH * OW);
    if (pointwise) {
      // 1x1 stride-1 columns are the input itself.
      ConstMatMap cmat(x.data() + b * in_ch_ * H * W, krows, OH * OW);
      ymat.noalias() = wmat * cmat;
    } else {
      gather_columns(x.data() + b * in_ch_ * H * W, H, W, OH, OW, cols.data());
      ConstMatMap cmat(cols.data(), krows, OH * OW);
      ymat.noalias() = wmat * cmat;
      if (training_) cached_cols_.push_back(cols);
    }
    if (with_bias_) {
      for (long oc = 0; oc < out_ch_; ++oc) ymat.row(oc).array() += bias.value[oc];
    }
  }
  cached_input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const Tensor& x = cached_input_;
  const long B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const long OH = out_size(H), OW = out_size(W);
  const long krows = in_ch_ * k_ * k_;
  check_shape(gy, {B, out_ch_, OH, OW}, "Conv2d::backward");
  const bool pointwise = k_ == 1 && stride_ == 1 && mode_ == Sampling::kPlanar;

  Tensor dx({B, in_ch_, H, W});
  Tensor cols, dcols;
  if (!pointwise) {
    cols.resize({krows, OH * OW});
    dcols.resize({krows, OH * OW});
  }
  ConstMatMap wmat(weight.value.data(), out_ch_, krows);
  MatMap dwmat(weight.grad.data(), out_ch_, krows);
  for (long b = 0; b < B; ++b) {
    ConstMatMap gymat(gy.data() + b * out_ch_ * OH * OW, out_ch_, OH * OW);
    if (pointwise) {
      ConstMatMap cmat(x.data() + b * in_ch_ * H * W, krows, OH * OW);
      dwmat.noalias() += gymat * cmat.transpose();
      MatMap dxmat(dx.data() + b * in_ch_ * H * W, krows, OH * OW);
      dxmat.noalias() = wmat.transpose() * gymat;
    } else {
      const bool have_cached = static_cast<size_t>(b) < cached_cols_.size();
      if (!have_cached) {
        gather_columns(x.data() + b * in_ch_ * H * W, H, W, OH, OW, cols.data());
      }
      ConstMatMap cmat(have_cached ? cached_cols_[static_cast<size_t>(b)].data() : cols.data(),
                       krows, OH * OW);
      dwmat.noalias() += gymat * cmat.transpose();
      MatMap dcmat(dcols.data(), krows, OH * OW);
      dcmat.noalias() = wmat.transpose() * gymat;
      scatter_columns(dcols.data(), H, W, OH, OW, dx.data() + b * in_ch_ * H * W);
    }
    if (with_bias_) {
      for (long oc = 0; oc < out_ch_; ++oc) bias.grad[oc] += gymat.row(oc).sum();
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2d

MaxPool2d::MaxPool2d(long kernel, long stride, Sampling mode)
    : k_(kernel), stride_(stride), mode_(mode) {
  if (kernel % 2 == 0) throw std::invalid_argument("MaxPool2d: kernel size must be odd");
}

Tensor MaxPool2d::forward(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("MaxPool2d: expected B x C x H x W input");
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long OH = out_size(H), OW = out_size(W);
  const long pad = k_ / 2;
  if (mode_ == Sampling::kSpherical) grid_ = GridCache::instance().get(H, W, k_, k_);

  Tensor y({B, C, OH, OW});
  argmax_.assign(static_cast<size_t>(B * C * OH * OW), -1);
  for (long b = 0; b < B; ++b) {
    for (long c = 0; c < C; ++c) {
      const double* plane = x.data() + (b * C + c) * H * W;
      double* out_row = y.data() + (b * C + c) * OH * OW;
      int32_t* am_row = argmax_.data() + (b * C + c) * OH * OW;
      for (long r = 0; r < OH; ++r) {
        double* out = out_row + r * OW;
        int32_t* am = am_row + r * OW;
        std::fill(out, out + OW, -std::numeric_limits<double>::infinity());
        for (long ti = 0; ti < k_; ++ti) {
          for (long tj = 0; tj < k_; ++tj) {
            const int32_t tap = static_cast<int32_t>(ti * k_ + tj);
            if (mode_ == Sampling::kPlanar) {
              const long ir = r * stride_ - pad + ti;
              if (ir < 0 || ir >= H) continue;
              const double* row = plane + ir * W;
              for (long col = 0; col < OW; ++col) {
                const long jc = col * stride_ - pad + tj;
                if (jc < 0 || jc >= W) continue;
                const double v = row[jc];
                if (v > out[col]) {
                  out[col] = v;
                  am[col] = tap;
                }
              }
            } else {
              const RowTap t = make_row_tap(*grid_, H, W, r * stride_, ti, tj);
              const double* row0 = plane + t.r0 * W;
              const double* row1 = plane + t.r1 * W;
              for (long col = 0; col < OW; ++col) {
                long c0 = t.c0_base + col * stride_;
                if (c0 >= W) c0 -= W;
                long c1 = c0 + 1;
                if (c1 == W) c1 = 0;
                const double v =
                    t.w00 * row0[c0] + t.w01 * row0[c1] + t.w10 * row1[c0] + t.w11 * row1[c1];
                if (v > out[col]) {
                  out[col] = v;
                  am[col] = tap;
                }
              }
            }
          }
        }
      }
    }
  }
  cached_input_ = x;
  return y;
}

Tensor MaxPool2d::backward(const Tensor& gy) {
  const Tensor& x = cached_input_;
  const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const long OH = out_size(H), OW = out_size(W);
  const long pad = k_ / 2;
  check_shape(gy, {B, C, OH, OW}, "MaxPool2d::backward");

  Tensor dx({B, C, H, W});
  const double* g = gy.data();
  const int32_t* am = argmax_.data();
  for (long b = 0; b < B; ++b) {
    for (long c = 0; c < C; ++c) {
      double* dplane = dx.data() + (b * C + c) * H * W;
      for (long r = 0; r < OH; ++r) {
        for (long col = 0; col < OW; ++col) {
          const double gv = *g++;
          const int32_t tap = *am++;
          if (tap < 0 || gv == 0.0) continue;
          const long ti = tap / k_, tj = tap % k_;
          if (mode_ == Sampling::kPlanar) {
            const long ir = r * stride_ - pad + ti;
            const long jc = col * stride_ - pad + tj;
            dplane[ir * W + jc] += gv;
          } else {
            const long ir = r * stride_;
            const BilinearCorners bc = bilinear_corners(
                H, W, grid_->row_coord(ir, ti, tj),
                static_cast<double>(col * stride_) + grid_->col_shift(ir, ti, tj));
            dplane[bc.r0 * W + bc.c0] += gv * bc.w00;
            dplane[bc.r0 * W + bc.c1] += gv * bc.w01;
            dplane[bc.r1 * W + bc.c0] += gv * bc.w10;
            dplane[bc.r1 * W + bc.c1] += gv * bc.w11;
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(long channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma.setup({channels_});
  beta.setup({channels_});
  gamma.value.fill(1.0);
  running_mean.resize({channels_});
  running_var.resize({channels_});
  running_var.fill(1.0);
  inv_std_.resize({channels_});
}

void BatchNorm::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "gamma", &gamma.value, &gamma.grad});
  out.push_back({prefix + "beta", &beta.value, &beta.grad});
  out.push_back({prefix + "running_mean", &running_mean, nullptr});
  out.push_back({prefix + "running_var", &running_var, nullptr});
}

Tensor BatchNorm::forward(const Tensor& x) {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw std::invalid_argument("BatchNorm: channel dimension mismatch");
  }
  const long B = x.dim(0);
  const long C = channels_;
  long spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const long n = B * spatial;

  Tensor y(x.shape());
  xhat_.resize(x.shape());
  used_batch_stats_ = training_;

  for (long c = 0; c < C; ++c) {
    double mean, var;
    if (training_) {
      double sum = 0.0;
      for (long b = 0; b < B; ++b) {
        const double* p = x.data() + (b * C + c) * spatial;
        for (long i = 0; i < spatial; ++i) sum += p[i];
      }
      mean = sum / static_cast<double>(n);
      double sq = 0.0;
      for (long b = 0; b < B; ++b) {
        const double* p = x.data() + (b * C + c) * spatial;
        for (long i = 0; i < spatial; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(n);
      running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean;
      const double unbiased = n > 1 ? sq / static_cast<double>(n - 1) : var;
      running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = istd;
    const double g = gamma.value[c], bta = beta.value[c];
    for (long b = 0; b < B; ++b) {
      const double* p = x.data() + (b * C + c) * spatial;
      double* xh = xhat_.data() + (b * C + c) * spatial;
      double* o = y.data() + (b * C + c) * spatial;
      for (long i = 0; i < spatial; ++i) {
        xh[i] = (p[i] - mean) * istd;
        o[i] = g * xh[i] + bta;
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& gy) {
  check_shape(gy, xhat_.shape(), "BatchNorm::backward");
  const long B = gy.dim(0);
  const long C = channels_;
  long spatial = 1;
  for (int i = 2; i < gy.rank(); ++i) spatial *= gy.dim(i);
  const long n = B * spatial;

  Tensor dx(gy.shape());
  for (long c = 0; c < C; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (long b = 0; b < B; ++b) {
      const double* g = gy.data() + (b * C + c) * spatial;
      const double* xh = xhat_.data() + (b * C + c) * spatial;
      for (long i = 0; i < spatial; ++i) {
        sum_gy += g[i];
        sum_gy_xhat += g[i] * xh[i];
      }
    }
    gamma.grad[c] += sum_gy_xhat;
    beta.grad[c] += sum_gy;

    const double gi = gamma.value[c] * inv_std_[c];
    for (long b = 0; b < B; ++b) {
      const double* g = gy.data() + (b * C + c) * spatial;
      const double* xh = xhat_.data() + (b * C + c) * spatial;
      double* d = dx.data() + (b * C + c) * spatial;
      if (used_batch_stats_) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (long i = 0; i < spatial; ++i) {
          d[i] = gi * (g[i] - inv_n * sum_gy - inv_n * xh[i] * sum_gy_xhat);
        }
      } else {
        for (long i = 0; i < spatial; ++i) d[i] = gi * g[i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape());
  mask_.assign(static_cast<size_t>(x.numel()), 0);
  const double* p = x.data();
  double* o = y.data();
  for (long i = 0; i < x.numel(); ++i) {
    if (p[i] > 0.0) {
      o[i] = p[i];
      mask_[static_cast<size_t>(i)] = 1;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& gy) const {
  Tensor dx(gy.shape());
  const double* g = gy.data();
  double* d = dx.data();
  for (long i = 0; i < gy.numel(); ++i) {
    if (mask_[static_cast<size_t>(i)]) d[i] = g[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(long in, long out, bool with_bias) : in_(in), out_(out), with_bias_(with_bias) {
  weight.setup({out_, in_});
  if (with_bias_) bias.setup({out_});
}

void Linear::init_xavier(std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ + out_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : weight.value.raw()) v = dist(rng);
  if (with_bias_) bias.value.zero();
}

void Linear::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "weight", &weight.value, &weight.grad});
  if (with_bias_) out.push_back({prefix + "bias", &bias.value, &bias.grad});
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw std::invalid_argument("Linear: expected B x " + std::to_string(in_) + " input, got " +
                                x.shape_str());
  }
  const long B = x.dim(0);
  Tensor y({B, out_});
  ConstMatMap xm(x.data(), B, in_);
  ConstMatMap wm(weight.value.data(), out_, in_);
  MatMap ym(y.data(), B, out_);
  ym.noalias() = xm * wm.transpose();
  if (with_bias_) {
    for (long b = 0; b < B; ++b) {
      for (long o = 0; o < out_; ++o) y(b, o) += bias.value[o];
    }
  }
  cached_input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  const long B = cached_input_.dim(0);
  check_shape(gy, {B, out_}, "Linear::backward");
  Tensor dx({B, in_});
  ConstMatMap gym(gy.data(), B, out_);
  ConstMatMap xm(cached_input_.data(), B, in_);
  ConstMatMap wm(weight.value.data(), out_, in_);
  MatMap dwm(weight.grad.data(), out_, in_);
  MatMap dxm(dx.data(), B, in_);
  dwm.noalias() += gym.transpose() * xm;
  dxm.noalias() = gym * wm;
  if (with_bias_) {
    for (long b = 0; b < B; ++b) {
      for (long o = 0; o < out_; ++o) bias.grad[o] += gy(b, o);
    }
  }
  return dx;
}

}  // namespace panoloc
