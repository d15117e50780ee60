#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "panoloc/sphere_grid.hpp"
#include "panoloc/tensor.hpp"

namespace panoloc {

struct Parameter {
  Tensor value;
  Tensor grad;

  void setup(std::vector<long> shape) {
    value.resize(shape);
    grad.resize(shape);
  }
  void zero_grad() { grad.zero(); }
};

// Named view into a module's state. Parameters carry a grad pointer;
// persistent buffers (running statistics) do not.
struct TensorRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_state(const std::string& prefix, std::vector<TensorRef>& out) = 0;
  virtual void set_training(bool t) { training_ = t; }
  bool training() const { return training_; }

  std::vector<TensorRef> state() {
    std::vector<TensorRef> refs;
    collect_state("", refs);
    return refs;
  }
  std::vector<TensorRef> parameters() {
    std::vector<TensorRef> refs, params;
    collect_state("", refs);
    for (auto& r : refs)
      if (r.grad) params.push_back(r);
    return params;
  }
  void zero_grad() {
    for (auto& p : parameters()) p.grad->zero();
  }

 protected:
  bool training_ = true;
};

enum class Sampling { kPlanar, kSpherical };

// 2-D convolution over B x C x H x W maps. In planar mode the kernel reads a
// zero-padded regular neighborhood; in spherical mode it reads the
// gnomonic-projected taps of the cached sampling grid for the input
// resolution, with longitude wrap and latitude clamp. Stride-2 evaluates the
// grid on every second row/column, so the longitude dimension loses no border
// pixels. Weight layout: [out_ch, in_ch, k, k].
class Conv2d : public Module {
 public:
  Conv2d(long in_ch, long out_ch, long kernel, long stride, Sampling mode, bool with_bias = false);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init_kaiming(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;

  long out_size(long in) const { return (in + stride_ - 1) / stride_; }
  Sampling mode() const { return mode_; }
  void set_mode(Sampling m) { mode_ = m; }

  Parameter weight;
  Parameter bias;

 private:
  void gather_columns(const double* x, long H, long W, long OH, long OW, double* cols) const;
  void scatter_columns(const double* dcols, long H, long W, long OH, long OW, double* dx) const;

  long in_ch_, out_ch_, k_, stride_;
  Sampling mode_;
  bool with_bias_;
  std::shared_ptr<const SamplingGrid> grid_;  // set per forward resolution
  Tensor cached_input_;
  std::vector<Tensor> cached_cols_;  // per-item im2col, kept in training mode
};

// Max pooling with the same two sampling modes as Conv2d. Spherical mode takes
// the tap-wise maximum of bilinearly interpolated grid samples.
class MaxPool2d : public Module {
 public:
  MaxPool2d(long kernel, long stride, Sampling mode);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect_state(const std::string&, std::vector<TensorRef>&) override {}

  long out_size(long in) const { return (in + stride_ - 1) / stride_; }
  void set_mode(Sampling m) { mode_ = m; }

 private:
  long k_, stride_;
  Sampling mode_;
  std::shared_ptr<const SamplingGrid> grid_;
  Tensor cached_input_;
  std::vector<int32_t> argmax_;  // winning tap per output element
};

// Per-channel batch normalization over all non-channel dimensions
// (B, spatial). Training mode normalizes with batch statistics and maintains
// running estimates; eval mode applies the stored running statistics, which
// keeps the operator pointwise and shift-invariant.
class BatchNorm : public Module {
 public:
  explicit BatchNorm(long channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  long channels_;
  double eps_, momentum_;
  Tensor xhat_;
  Tensor inv_std_;  // per channel, for the mode used in forward
  bool used_batch_stats_ = false;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy) const;
  void collect_state(const std::string&, std::vector<TensorRef>&) override {}

 private:
  std::vector<uint8_t> mask_;
};

// Fully connected layer over B x In inputs. Weight layout: [out, in].
class Linear : public Module {
 public:
  Linear(long in, long out, bool with_bias = true);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init_xavier(std::mt19937_64& rng);
  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;

  Parameter weight;
  Parameter bias;

 private:
  long in_, out_;
  bool with_bias_;
  Tensor cached_input_;
};

}  // namespace panoloc
