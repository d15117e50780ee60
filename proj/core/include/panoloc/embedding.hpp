#pragma once

#include <random>
#include <vector>

#include "panoloc/attention.hpp"
#include "panoloc/backbone.hpp"
#include "panoloc/netvlad.hpp"

namespace panoloc {

struct ImageBranchConfig {
  long input_h = 512;
  long input_w = 1024;
  std::vector<long> widths = {64, 128, 256, 512};
  bool spherical = true;
  bool attention = true;
  long se_reduction = 16;
  long clusters = 64;
  long descriptor_dim = 256;
};

struct PointBranchConfig {
  long num_points = 4096;
  std::vector<long> widths = {64, 64, 64, 128, 1024};
  bool attention = true;
  long se_reduction = 16;
  long clusters = 64;
  long descriptor_dim = 256;
  double radius_scale = 30.0;  // coordinates divided by this before the MLP
};

// f: equirectangular image batch -> unit-norm global descriptors.
class ImageBranch : public Module {
 public:
  explicit ImageBranch(const ImageBranchConfig& cfg);

  // x: B x 3 x H x W, already resized and intensity-normalized.
  Tensor forward(const Tensor& x);
  // Feature map only (B x C1 x H/32 x W/32), before attention/aggregation.
  Tensor extract_features(const Tensor& x);
  Tensor backward(const Tensor& gd);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;
  void set_training(bool t) override;

  const ImageBranchConfig& config() const { return cfg_; }
  ResNetBackbone& backbone() { return backbone_; }
  SEBlock& attention() { return se_; }
  NetVladHead& head() { return head_; }

 private:
  ImageBranchConfig cfg_;
  ResNetBackbone backbone_;
  SEBlock se_;
  NetVladHead head_;
};

// g: point-cloud batch -> unit-norm global descriptors.
class PointBranch : public Module {
 public:
  explicit PointBranch(const PointBranchConfig& cfg);

  // points: B x N x 3 raw local-frame coordinates (meters). Each cloud is
  // centered on its centroid and scaled by 1/radius_scale before the MLP.
  Tensor forward(const Tensor& points);
  // Per-point feature map (B x C2 x N x 1).
  Tensor extract_features(const Tensor& points);
  Tensor backward(const Tensor& gd);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;
  void set_training(bool t) override;

  const PointBranchConfig& config() const { return cfg_; }
  PointNetExtractor& extractor() { return extractor_; }
  SEBlock& attention() { return se_; }
  NetVladHead& head() { return head_; }

  // Centers on the centroid, scales by 1/radius_scale, and lays the cloud out
  // as B x 3 x N x 1 for the shared MLP.
  Tensor preprocess(const Tensor& points) const;

 private:
  PointBranchConfig cfg_;
  PointNetExtractor extractor_;
  SEBlock se_;
  NetVladHead head_;
};

}  // namespace panoloc
