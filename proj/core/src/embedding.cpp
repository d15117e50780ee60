#include "panoloc/embedding.hpp"

#include <cmath>
#include <stdexcept>

namespace panoloc {

ImageBranch::ImageBranch(const ImageBranchConfig& cfg)
    : cfg_(cfg),
      backbone_(3, cfg.widths, cfg.spherical ? Sampling::kSpherical : Sampling::kPlanar),
      se_(cfg.widths.back(), cfg.se_reduction, cfg.attention),
      head_(cfg.widths.back(), cfg.clusters, cfg.descriptor_dim) {
  if (cfg.input_w != 2 * cfg.input_h) {
    throw std::invalid_argument("ImageBranch: equirectangular input requires W = 2H");
  }
  if (cfg.input_h % 32 != 0) {
    throw std::invalid_argument("ImageBranch: input height must be divisible by 32");
  }
}

void ImageBranch::init(std::mt19937_64& rng) {
  backbone_.init(rng);
  se_.init(rng);
  head_.init(rng);
}

void ImageBranch::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  backbone_.collect_state(prefix + "backbone.", out);
  se_.collect_state(prefix + "se.", out);
  head_.collect_state(prefix + "vlad.", out);
}

void ImageBranch::set_training(bool t) {
  Module::set_training(t);
  backbone_.set_training(t);
  se_.set_training(t);
  head_.set_training(t);
}

Tensor ImageBranch::extract_features(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w) {
    throw std::invalid_argument("ImageBranch: expected B x 3 x " + std::to_string(cfg_.input_h) +
                                " x " + std::to_string(cfg_.input_w) + " input, got " +
                                x.shape_str());
  }
  return backbone_.forward(x);
}

Tensor ImageBranch::forward(const Tensor& x) {
  return head_.forward(se_.forward(extract_features(x)));
}

Tensor ImageBranch::backward(const Tensor& gd) {
  return backbone_.backward(se_.backward(head_.backward(gd)));
}

PointBranch::PointBranch(const PointBranchConfig& cfg)
    : cfg_(cfg),
      extractor_(cfg.widths),
      se_(cfg.widths.back(), cfg.se_reduction, cfg.attention),
      head_(cfg.widths.back(), cfg.clusters, cfg.descriptor_dim) {
  if (cfg.num_points < 1) throw std::invalid_argument("PointBranch: num_points must be positive");
  if (cfg.radius_scale <= 0.0) {
    throw std::invalid_argument("PointBranch: radius_scale must be positive");
  }
}

void PointBranch::init(std::mt19937_64& rng) {
  extractor_.init(rng);
  se_.init(rng);
  head_.init(rng);
}

void PointBranch::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  extractor_.collect_state(prefix + "pointnet.", out);
  se_.collect_state(prefix + "se.", out);
  head_.collect_state(prefix + "vlad.", out);
}

void PointBranch::set_training(bool t) {
  Module::set_training(t);
  extractor_.set_training(t);
  se_.set_training(t);
  head_.set_training(t);
}

Tensor PointBranch::preprocess(const Tensor& points) const {
  if (points.rank() != 3 || points.dim(2) != 3) {
    throw std::invalid_argument("PointBranch: expected B x N x 3 point batch");
  }
  if (points.dim(1) != cfg_.num_points) {
    throw std::invalid_argument("PointBranch: expected " + std::to_string(cfg_.num_points) +
                                " points per cloud, got " + std::to_string(points.dim(1)));
  }
  const long B = points.dim(0), N = points.dim(1);
  for (long i = 0; i < points.numel(); ++i) {
    if (!std::isfinite(points[i])) {
      throw std::invalid_argument("PointBranch: non-finite point coordinate");
    }
  }
  Tensor out({B, 3, N, 1});
  const double inv_scale = 1.0 / cfg_.radius_scale;
  for (long b = 0; b < B; ++b) {
    double cx = 0.0, cy = 0.0, cz = 0.0;
    for (long n = 0; n < N; ++n) {
      cx += points(b, n, 0);
      cy += points(b, n, 1);
      cz += points(b, n, 2);
    }
    cx /= static_cast<double>(N);
    cy /= static_cast<double>(N);
    cz /= static_cast<double>(N);
    for (long n = 0; n < N; ++n) {
      out(b, 0, n, 0) = (points(b, n, 0) - cx) * inv_scale;
      out(b, 1, n, 0) = (points(b, n, 1) - cy) * inv_scale;
      out(b, 2, n, 0) = (points(b, n, 2) - cz) * inv_scale;
    }
  }
  return out;
}

Tensor PointBranch::extract_features(const Tensor& points) {
  return extractor_.forward(preprocess(points));
}

Tensor PointBranch::forward(const Tensor& points) {
  return head_.forward(se_.forward(extract_features(points)));
}

Tensor PointBranch::backward(const Tensor& gd) {
  return extractor_.backward(se_.backward(head_.backward(gd)));
}

}  // namespace panoloc
