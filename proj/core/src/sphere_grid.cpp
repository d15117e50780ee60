#include "panoloc/sphere_grid.hpp"

#include <algorithm>
#include <stdexcept>

namespace panoloc {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double wrap_lon(double lon) {
  double x = std::fmod(lon + kPi, 2.0 * kPi);
  if (x < 0) x += 2.0 * kPi;
  return x - kPi;
}

SphereCoord pix_to_sphere(long row, long col, long H, long W) {
  if (row < 0 || row >= H || col < 0 || col >= W) {
    throw std::invalid_argument("pix_to_sphere: pixel index out of range");
  }
  return pixf_to_sphere(static_cast<double>(row), static_cast<double>(col), H, W);
}

SphereCoord pixf_to_sphere(double row, double col, long H, long W) {
  SphereCoord s;
  s.lat = kPi / 2.0 - kPi * (row + 0.5) / static_cast<double>(H);
  s.lon = wrap_lon(2.0 * kPi * (col + 0.5) / static_cast<double>(W) - kPi);
  return s;
}

double sphere_to_row(double lat, long H) {
  return (kPi / 2.0 - lat) * static_cast<double>(H) / kPi - 0.5;
}

double sphere_to_col(double lon, long W) {
  return (lon + kPi) * static_cast<double>(W) / (2.0 * kPi) - 0.5;
}

SamplingGrid::SamplingGrid(long H, long W, long kh, long kw)
    : H_(H), W_(W), kh_(kh), kw_(kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument("SamplingGrid: kernel dimensions must be odd");
  }
  if (H < kh || W < kw) {
    throw std::invalid_argument("SamplingGrid: map smaller than kernel");
  }
  row_coord_.resize(static_cast<size_t>(H * kh * kw));
  col_shift_.resize(static_cast<size_t>(H * kh * kw));

  const double dphi = kPi / static_cast<double>(H);
  const double dlam = 2.0 * kPi / static_cast<double>(W);
  const double tan_dphi = std::tan(dphi);
  const double tan_dlam = std::tan(dlam);

  for (long r = 0; r < H; ++r) {
    const double phi0 = kPi / 2.0 - kPi * (static_cast<double>(r) + 0.5) / static_cast<double>(H);
    const double sin_phi0 = std::sin(phi0);
    const double cos_phi0 = std::cos(phi0);
    for (long ti = 0; ti < kh; ++ti) {
      // ti = 0 is the top (north) stencil row; tj = 0 the left (west) column.
      const double i = static_cast<double>((kh - 1) / 2 - ti);
      for (long tj = 0; tj < kw; ++tj) {
        const double j = static_cast<double>(tj - (kw - 1) / 2);
        const double x = j * tan_dlam;
        const double y = i * tan_dphi;
        const double rho = std::sqrt(x * x + y * y);

        double phi, dlon;
        if (rho == 0.0) {
          phi = phi0;
          dlon = 0.0;
        } else {
          const double nu = std::atan(rho);
          const double sin_nu = std::sin(nu);
          const double cos_nu = std::cos(nu);
          double s = cos_nu * sin_phi0 + y * sin_nu * cos_phi0 / rho;
          s = std::clamp(s, -1.0, 1.0);
          phi = std::asin(s);
          dlon = std::atan2(x * sin_nu, rho * cos_phi0 * cos_nu - y * sin_phi0 * sin_nu);
        }

        const size_t idx = static_cast<size_t>((r * kh + ti) * kw + tj);
        row_coord_[idx] = sphere_to_row(phi, H);
        col_shift_[idx] = dlon * static_cast<double>(W) / (2.0 * kPi);
      }
    }
  }
}

std::shared_ptr<const SamplingGrid> gnomonic_grid(long H, long W, long kh, long kw) {
  return std::make_shared<const SamplingGrid>(H, W, kh, kw);
}

GridCache& GridCache::instance() {
  static GridCache cache;
  return cache;
}

std::shared_ptr<const SamplingGrid> GridCache::get(long H, long W, long kh, long kw) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto key = std::make_tuple(H, W, kh, kw);
  auto it = grids_.find(key);
  if (it != grids_.end()) return it->second;
  auto grid = gnomonic_grid(H, W, kh, kw);
  grids_.emplace(key, grid);
  return grid;
}

Tensor bilinear_sample_wrap(const Tensor& map, const SamplingGrid& grid) {
  if (map.rank() != 3) {
    throw std::invalid_argument("bilinear_sample_wrap: expected C x H x W map");
  }
  const long C = map.dim(0), H = map.dim(1), W = map.dim(2);
  if (H != grid.height() || W != grid.width()) {
    throw std::invalid_argument("bilinear_sample_wrap: grid resolution does not match map");
  }
  const long kh = grid.kernel_h(), kw = grid.kernel_w();
  Tensor out({C, H, W, kh, kw});
  double* o = out.data();
  for (long c = 0; c < C; ++c) {
    const double* plane = map.data() + c * H * W;
    for (long r = 0; r < H; ++r) {
      for (long col = 0; col < W; ++col) {
        for (long ti = 0; ti < kh; ++ti) {
          for (long tj = 0; tj < kw; ++tj) {
            const SamplingGrid::Tap t = grid.tap(r, col, ti, tj);
            *o++ = bilinear_at(plane, H, W, t.row, t.col);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace panoloc
