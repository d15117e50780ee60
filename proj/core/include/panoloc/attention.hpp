#pragma once

#include <random>

#include "panoloc/layers.hpp"
#include "panoloc/tensor.hpp"

namespace panoloc {

// Channel re-calibration primitives. A feature map U (C x D1 x D2) is pooled
// to a channel descriptor Z, mapped through a bottleneck to per-channel gates
// S = sigmoid(W2 relu(W1 Z)), and rescaled channel-wise.

// z_i = mean of channel i over all spatial positions.
Tensor se_squeeze(const Tensor& u);

// S = sigmoid(W2 relu(W1 z)); W1 is (C/r) x C, W2 is C x (C/r), no biases.
Tensor se_excite(const Tensor& z, const Tensor& w1, const Tensor& w2);

// Scales channel i of u by s[i].
Tensor se_recalibrate(const Tensor& u, const Tensor& s);

// Squeeze-and-excitation block over B x C x H x W maps. When disabled (the
// ablation switch) the block is exactly the identity, i.e. S == 1.
class SEBlock : public Module {
 public:
  SEBlock(long channels, long reduction, bool enabled = true);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;

  bool enabled() const { return enabled_; }
  long reduction() const { return reduction_; }

  Parameter w1;  // (C/r) x C
  Parameter w2;  // C x (C/r)

 private:
  long channels_, reduction_, hidden_;
  bool enabled_;
  Tensor cached_input_;
  Tensor z_;      // B x C
  Tensor h_;      // B x C/r, post-ReLU
  Tensor s_;      // B x C
};

}  // namespace panoloc
