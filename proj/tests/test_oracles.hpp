// Independent reference implementations used as test oracles. These stay
// deliberately naive (scalar loops, explicit 3-D vector geometry) and must not
// share code with the library paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "panoloc/tensor.hpp"

namespace oracle {

constexpr double kPi = 3.14159265358979323846;

// --- Spherical geometry -----------------------------------------------------

// Gnomonic tap location via explicit tangent-plane basis vectors: the tap at
// tangent coordinates (x east, y north) of the unit sphere point (lat0, lon0)
// is the normalized 3-D point  n0 + x*e + y*m.
inline void gnomonic_tap_3d(double lat0, double lon0, double x, double y, double* lat,
                            double* lon) {
  const double n0[3] = {std::cos(lat0) * std::cos(lon0), std::cos(lat0) * std::sin(lon0),
                        std::sin(lat0)};
  const double east[3] = {-std::sin(lon0), std::cos(lon0), 0.0};
  const double north[3] = {-std::sin(lat0) * std::cos(lon0), -std::sin(lat0) * std::sin(lon0),
                           std::cos(lat0)};
  double p[3];
  for (int i = 0; i < 3; ++i) p[i] = n0[i] + x * east[i] + y * north[i];
  const double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  *lat = std::asin(p[2] / norm);
  *lon = std::atan2(p[1], p[0]);
}

// Tap (ti, tj) of a kh x kw kernel at pixel (r, c) of an H x W map, as
// fractional source coordinates. Same conventions as the library: pixel-center
// angles, tangent spacing tan(pi/H) / tan(2*pi/W), ti=0 north, tj=0 west.
inline void reference_tap(long H, long W, long kh, long kw, long r, long c, long ti, long tj,
                          double* row, double* col) {
  const double lat0 = kPi / 2.0 - kPi * (static_cast<double>(r) + 0.5) / static_cast<double>(H);
  const double lon0 = 2.0 * kPi * (static_cast<double>(c) + 0.5) / static_cast<double>(W) - kPi;
  const double i = static_cast<double>((kh - 1) / 2 - ti);
  const double j = static_cast<double>(tj - (kw - 1) / 2);
  double lat, lon;
  if (i == 0.0 && j == 0.0) {
    lat = lat0;
    lon = lon0;
  } else {
    gnomonic_tap_3d(lat0, lon0, j * std::tan(2.0 * kPi / static_cast<double>(W)),
                    i * std::tan(kPi / static_cast<double>(H)), &lat, &lon);
  }
  *row = (kPi / 2.0 - lat) * static_cast<double>(H) / kPi - 0.5;
  double dcol = (lon - lon0) * static_cast<double>(W) / (2.0 * kPi);
  // Shortest wrap of the longitude difference.
  while (dcol > static_cast<double>(W) / 2.0) dcol -= static_cast<double>(W);
  while (dcol < -static_cast<double>(W) / 2.0) dcol += static_cast<double>(W);
  *col = static_cast<double>(c) + dcol;
}

// Scalar bilinear sample with latitude clamp and longitude wrap.
inline double reference_bilinear(const double* plane, long H, long W, double row, double col) {
  double u = std::fmod(col, static_cast<double>(W));
  if (u < 0) u += static_cast<double>(W);
  const long c0 = static_cast<long>(std::floor(u)) % W;
  const long c1 = (c0 + 1) % W;
  const double tc = u - std::floor(u);
  const double rf = std::floor(row);
  const double tr = row - rf;
  auto clamp_row = [H](long r) { return r < 0 ? 0L : (r >= H ? H - 1 : r); };
  const long r0 = clamp_row(static_cast<long>(rf));
  const long r1 = clamp_row(static_cast<long>(rf) + 1);
  return (1.0 - tr) * ((1.0 - tc) * plane[r0 * W + c0] + tc * plane[r0 * W + c1]) +
         tr * ((1.0 - tc) * plane[r1 * W + c0] + tc * plane[r1 * W + c1]);
}

// --- Scalar convolution / pooling -------------------------------------------

// weight layout [OC][IC][k][k]; input [IC][H][W]; spherical sampling.
inline panoloc::Tensor reference_spherical_conv(const panoloc::Tensor& x,
                                                const panoloc::Tensor& w, long stride) {
  const long IC = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long OC = w.dim(0), k = w.dim(2);
  const long OH = (H + stride - 1) / stride, OW = (W + stride - 1) / stride;
  panoloc::Tensor y({OC, OH, OW});
  for (long oc = 0; oc < OC; ++oc) {
    for (long r = 0; r < OH; ++r) {
      for (long c = 0; c < OW; ++c) {
        double acc = 0.0;
        for (long ic = 0; ic < IC; ++ic) {
          const double* plane = x.data() + ic * H * W;
          for (long ti = 0; ti < k; ++ti) {
            for (long tj = 0; tj < k; ++tj) {
              double row, col;
              reference_tap(H, W, k, k, r * stride, c * stride, ti, tj, &row, &col);
              acc += w(oc, ic, ti, tj) * reference_bilinear(plane, H, W, row, col);
            }
          }
        }
        y(oc, r, c) = acc;
      }
    }
  }
  return y;
}

inline panoloc::Tensor reference_spherical_maxpool(const panoloc::Tensor& x, long k, long stride) {
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long OH = (H + stride - 1) / stride, OW = (W + stride - 1) / stride;
  panoloc::Tensor y({C, OH, OW});
  for (long c = 0; c < C; ++c) {
    const double* plane = x.data() + c * H * W;
    for (long r = 0; r < OH; ++r) {
      for (long col = 0; col < OW; ++col) {
        double best = -1e300;
        for (long ti = 0; ti < k; ++ti) {
          for (long tj = 0; tj < k; ++tj) {
            double row, cc;
            reference_tap(H, W, k, k, r * stride, col * stride, ti, tj, &row, &cc);
            best = std::max(best, reference_bilinear(plane, H, W, row, cc));
          }
        }
        y(c, r, col) = best;
      }
    }
  }
  return y;
}

// Conventional zero-padded convolution, input [IC][H][W].
inline panoloc::Tensor reference_planar_conv(const panoloc::Tensor& x, const panoloc::Tensor& w,
                                             long stride) {
  const long IC = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long OC = w.dim(0), k = w.dim(2), pad = k / 2;
  const long OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  panoloc::Tensor y({OC, OH, OW});
  for (long oc = 0; oc < OC; ++oc) {
    for (long r = 0; r < OH; ++r) {
      for (long c = 0; c < OW; ++c) {
        double acc = 0.0;
        for (long ic = 0; ic < IC; ++ic) {
          for (long ti = 0; ti < k; ++ti) {
            for (long tj = 0; tj < k; ++tj) {
              const long ir = r * stride - pad + ti;
              const long jc = c * stride - pad + tj;
              if (ir < 0 || ir >= H || jc < 0 || jc >= W) continue;
              acc += w(oc, ic, ti, tj) * x(ic, ir, jc);
            }
          }
        }
        y(oc, r, c) = acc;
      }
    }
  }
  return y;
}

inline panoloc::Tensor reference_planar_maxpool(const panoloc::Tensor& x, long k, long stride) {
  const long C = x.dim(0), H = x.dim(1), W = x.dim(2), pad = k / 2;
  const long OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  panoloc::Tensor y({C, OH, OW});
  for (long c = 0; c < C; ++c) {
    for (long r = 0; r < OH; ++r) {
      for (long col = 0; col < OW; ++col) {
        double best = -1e300;
        for (long ti = 0; ti < k; ++ti) {
          for (long tj = 0; tj < k; ++tj) {
            const long ir = r * stride - pad + ti;
            const long jc = col * stride - pad + tj;
            if (ir < 0 || ir >= H || jc < 0 || jc >= W) continue;
            best = std::max(best, x(c, ir, jc));
          }
        }
        y(c, r, col) = best;
      }
    }
  }
  return y;
}

// --- Attention / aggregation / losses ---------------------------------------

inline std::vector<double> reference_squeeze(const panoloc::Tensor& u) {
  const long C = u.dim(0);
  long spatial = 1;
  for (int i = 1; i < u.rank(); ++i) spatial *= u.dim(i);
  std::vector<double> z(static_cast<size_t>(C), 0.0);
  for (long c = 0; c < C; ++c) {
    for (long i = 0; i < spatial; ++i) z[static_cast<size_t>(c)] += u.data()[c * spatial + i];
    z[static_cast<size_t>(c)] /= static_cast<double>(spatial);
  }
  return z;
}

inline std::vector<double> reference_excite(const std::vector<double>& z,
                                            const panoloc::Tensor& w1,
                                            const panoloc::Tensor& w2) {
  const long hidden = w1.dim(0), C = w1.dim(1);
  std::vector<double> h(static_cast<size_t>(hidden), 0.0);
  for (long j = 0; j < hidden; ++j) {
    double acc = 0.0;
    for (long c = 0; c < C; ++c) acc += w1(j, c) * z[static_cast<size_t>(c)];
    h[static_cast<size_t>(j)] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> s(static_cast<size_t>(C), 0.0);
  for (long c = 0; c < C; ++c) {
    double acc = 0.0;
    for (long j = 0; j < hidden; ++j) acc += w2(c, j) * h[static_cast<size_t>(j)];
    s[static_cast<size_t>(c)] = 1.0 / (1.0 + std::exp(-acc));
  }
  return s;
}

// features [M][C]; per-feature softmax over K clusters, residual sums.
inline panoloc::Tensor reference_netvlad(const panoloc::Tensor& feats,
                                         const panoloc::Tensor& centers,
                                         const panoloc::Tensor& assign_w,
                                         const panoloc::Tensor& assign_b) {
  const long M = feats.dim(0), C = feats.dim(1), K = centers.dim(0);
  panoloc::Tensor g({K, C});
  for (long m = 0; m < M; ++m) {
    std::vector<double> score(static_cast<size_t>(K), 0.0);
    double mx = -1e300;
    for (long k = 0; k < K; ++k) {
      double acc = assign_b[k];
      for (long c = 0; c < C; ++c) acc += assign_w(k, c) * feats(m, c);
      score[static_cast<size_t>(k)] = acc;
      mx = std::max(mx, acc);
    }
    double denom = 0.0;
    for (long k = 0; k < K; ++k) denom += std::exp(score[static_cast<size_t>(k)] - mx);
    for (long k = 0; k < K; ++k) {
      const double a = std::exp(score[static_cast<size_t>(k)] - mx) / denom;
      for (long c = 0; c < C; ++c) g(k, c) += a * (feats(m, c) - centers(k, c));
    }
  }
  return g;
}

inline std::vector<double> reference_compress_normalize(const panoloc::Tensor& g,
                                                        const panoloc::Tensor& fc) {
  const long K = g.dim(0), C = g.dim(1), D = fc.dim(0);
  std::vector<double> flat(static_cast<size_t>(K * C), 0.0);
  for (long k = 0; k < K; ++k) {
    double n = 0.0;
    for (long c = 0; c < C; ++c) n += g(k, c) * g(k, c);
    n = std::sqrt(n);
    if (n > 1e-12) {
      for (long c = 0; c < C; ++c) flat[static_cast<size_t>(k * C + c)] = g(k, c) / n;
    }
  }
  double fn = 0.0;
  for (double v : flat) fn += v * v;
  fn = std::sqrt(fn);
  for (double& v : flat) v /= fn;
  std::vector<double> y(static_cast<size_t>(D), 0.0);
  for (long d = 0; d < D; ++d) {
    for (long i = 0; i < K * C; ++i) y[static_cast<size_t>(d)] += fc(d, i) * flat[static_cast<size_t>(i)];
  }
  double yn = 0.0;
  for (double v : y) yn += v * v;
  yn = std::sqrt(yn);
  for (double& v : y) v /= yn;
  return y;
}

inline double reference_distance(const panoloc::Tensor& a, const panoloc::Tensor& b) {
  double sq = 0.0;
  for (long i = 0; i < a.numel(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

inline double reference_triplet(const panoloc::Tensor& a, const panoloc::Tensor& p,
                                const std::vector<panoloc::Tensor>& negs, double m) {
  const double dap = reference_distance(a, p);
  double acc = 0.0;
  for (const auto& n : negs) {
    const double h = dap - reference_distance(a, n) + m;
    acc += h > 0.0 ? h : 0.0;
  }
  return acc / static_cast<double>(negs.size());
}

// --- Numerics ----------------------------------------------------------------

// Central finite difference of f at x[i].
inline double central_difference(const std::function<double()>& f, double* slot,
                                 double h = 1e-6) {
  const double saved = *slot;
  *slot = saved + h;
  const double fp = f();
  *slot = saved - h;
  const double fm = f();
  *slot = saved;
  return (fp - fm) / (2.0 * h);
}

inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-4,
                       double abs_tol = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_tol) return true;
  return diff / std::max({std::abs(analytic), std::abs(numeric), 1e-12}) <= rel_tol;
}

inline double max_rel_err(const panoloc::Tensor& a, const panoloc::Tensor& b) {
  double worst = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    const double diff = std::abs(a[i] - b[i]);
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-9});
    worst = std::max(worst, diff / denom);
  }
  return worst;
}

}  // namespace oracle
