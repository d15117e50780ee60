#pragma once

#include <memory>
#include <random>
#include <vector>

#include "panoloc/layers.hpp"

namespace panoloc {

// Two-conv residual block with optional strided 1x1 projection shortcut.
class BasicBlock : public Module {
 public:
  BasicBlock(long in_ch, long out_ch, long stride, Sampling mode);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;
  void set_training(bool t) override;

 private:
  Conv2d conv1_, conv2_;
  BatchNorm bn1_, bn2_;
  ReLU relu1_, relu2_;
  bool has_projection_;
  std::unique_ptr<Conv2d> proj_conv_;
  std::unique_ptr<BatchNorm> proj_bn_;
};

// 18-layer residual feature extractor: 7x7 stride-2 stem, 3x3 stride-2 max
// pool, four stages of two blocks each. The final classifier and global
// pooling of the original architecture are absent so the spatial feature map
// survives. All convolutions and the stem pool sample either planar
// (zero-padded) or spherical (gnomonic grid) according to `mode`.
class ResNetBackbone : public Module {
 public:
  ResNetBackbone(long in_ch, std::vector<long> widths, Sampling mode);

  Tensor forward(const Tensor& x);   // B x in_ch x H x W -> B x widths[3] x H/32 x W/32
  Tensor backward(const Tensor& gy);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;
  void set_training(bool t) override;

  long out_channels() const { return widths_.back(); }
  Sampling mode() const { return mode_; }

 private:
  std::vector<long> widths_;
  Sampling mode_;
  Conv2d stem_conv_;
  BatchNorm stem_bn_;
  ReLU stem_relu_;
  MaxPool2d stem_pool_;
  std::vector<std::unique_ptr<BasicBlock>> blocks_;
};

// Shared per-point MLP: a stack of 1x1 convolutions with per-channel
// normalization and ReLU, applied identically to every point. No global
// pooling, so the output stays per-point: B x widths.back() x N x 1.
class PointNetExtractor : public Module {
 public:
  explicit PointNetExtractor(std::vector<long> widths);

  Tensor forward(const Tensor& x);   // B x 3 x N x 1
  Tensor backward(const Tensor& gy);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;
  void set_training(bool t) override;

  long out_channels() const { return widths_.back(); }

 private:
  std::vector<long> widths_;
  std::vector<std::unique_ptr<Conv2d>> convs_;
  std::vector<std::unique_ptr<BatchNorm>> bns_;
  std::vector<std::unique_ptr<ReLU>> relus_;
};

}  // namespace panoloc
