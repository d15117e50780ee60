#pragma once

#include <cmath>
#include <memory>
#include <mutex>
#include <map>
#include <tuple>

#include "panoloc/tensor.hpp"

namespace panoloc {

// Angular convention for equirectangular images (pixel-center):
//   lat = pi/2 - pi*(row+0.5)/H     in [-pi/2, pi/2], north pole up
//   lon = 2*pi*(col+0.5)/W - pi     in [-pi, pi), wrapping in longitude
struct SphereCoord {
  double lat = 0.0;
  double lon = 0.0;
};

double wrap_lon(double lon);

SphereCoord pix_to_sphere(long row, long col, long H, long W);
// Fractional-pixel inverses of the convention above.
SphereCoord pixf_to_sphere(double row, double col, long H, long W);
double sphere_to_row(double lat, long H);
double sphere_to_col(double lon, long W);

// Sampling grid for one (H, W, kh, kw) pyramid level. Taps are placed by
// inverse gnomonic projection of a regular tangent-plane stencil, so the
// effective receptive field follows the latitude-dependent distortion of the
// equirectangular parameterization. Storage exploits row uniformity: taps of
// all pixels in one row are identical up to an integer column shift, so only
// H * kh * kw entries are kept; tap(r, c, ti, tj) reconstructs the full
// H x W x kh x kw x 2 tap field.
//
// Tap layout matches a conventional kernel: ti = 0 is the northernmost row of
// the stencil, tj = 0 the westernmost column, and the center tap lands on the
// output pixel itself.
class SamplingGrid {
 public:
  SamplingGrid(long H, long W, long kh, long kw);

  long height() const { return H_; }
  long width() const { return W_; }
  long kernel_h() const { return kh_; }
  long kernel_w() const { return kw_; }

  struct Tap {
    double row;  // fractional source row, in [-0.5, H-0.5]
    double col;  // fractional source column, interpreted modulo W
  };

  Tap tap(long r, long c, long ti, long tj) const {
    const size_t idx = static_cast<size_t>((r * kh_ + ti) * kw_ + tj);
    return Tap{row_coord_[idx], static_cast<double>(c) + col_shift_[idx]};
  }

  double row_coord(long r, long ti, long tj) const {
    return row_coord_[static_cast<size_t>((r * kh_ + ti) * kw_ + tj)];
  }
  double col_shift(long r, long ti, long tj) const {
    return col_shift_[static_cast<size_t>((r * kh_ + ti) * kw_ + tj)];
  }

 private:
  long H_, W_, kh_, kw_;
  std::vector<double> row_coord_;  // [H][kh][kw]
  std::vector<double> col_shift_;  // [H][kh][kw]
};

// Builds the distortion-correcting grid. Tangent-plane tap spacing is
// tan(pi/H) vertically and tan(2*pi/W) horizontally; kernel dims must be odd
// and no larger than the map.
std::shared_ptr<const SamplingGrid> gnomonic_grid(long H, long W, long kh, long kw);

// Process-wide cache of grids keyed by (H, W, kh, kw). Grids are immutable
// once built; lookups after initialization are safe from any thread.
class GridCache {
 public:
  std::shared_ptr<const SamplingGrid> get(long H, long W, long kh, long kw);
  static GridCache& instance();

 private:
  std::mutex mutex_;
  std::map<std::tuple<long, long, long, long>, std::shared_ptr<const SamplingGrid>> grids_;
};

// Bilinear interpolation weights for one fractional coordinate pair:
// rows clamp to [0, H-1], columns wrap modulo W.
struct BilinearCorners {
  long r0, r1, c0, c1;
  double w00, w01, w10, w11;  // (r0,c0), (r0,c1), (r1,c0), (r1,c1)
};

inline BilinearCorners bilinear_corners(long H, long W, double row, double col) {
  double u = std::fmod(col, static_cast<double>(W));
  if (u < 0) u += static_cast<double>(W);
  if (u >= static_cast<double>(W)) u = 0.0;  // fmod rounding at the seam
  long c0 = static_cast<long>(std::floor(u));
  long c1 = (c0 + 1) % W;
  const double tc = u - static_cast<double>(c0);

  const double rf = std::floor(row);
  const double tr = row - rf;
  long r0 = static_cast<long>(rf);
  long r1 = r0 + 1;
  if (r0 < 0) r0 = 0;
  if (r0 > H - 1) r0 = H - 1;
  if (r1 < 0) r1 = 0;
  if (r1 > H - 1) r1 = H - 1;

  BilinearCorners b;
  b.r0 = r0;
  b.r1 = r1;
  b.c0 = c0;
  b.c1 = c1;
  b.w00 = (1.0 - tr) * (1.0 - tc);
  b.w01 = (1.0 - tr) * tc;
  b.w10 = tr * (1.0 - tc);
  b.w11 = tr * tc;
  return b;
}

inline double bilinear_at(const double* plane, long H, long W, double row, double col) {
  const BilinearCorners b = bilinear_corners(H, W, row, col);
  return b.w00 * plane[b.r0 * W + b.c0] + b.w01 * plane[b.r0 * W + b.c1] +
         b.w10 * plane[b.r1 * W + b.c0] + b.w11 * plane[b.r1 * W + b.c1];
}

// Samples every tap of the grid over a C x H x W map, producing a
// C x H x W x kh x kw tensor. Column coordinates wrap, rows clamp.
Tensor bilinear_sample_wrap(const Tensor& map, const SamplingGrid& grid);

}  // namespace panoloc
