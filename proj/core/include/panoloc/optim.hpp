#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "panoloc/layers.hpp"

namespace panoloc {

enum class OptimizerKind { kAdam, kSgd };

// First-order optimizer over a fixed set of named parameters. State tensors
// are keyed by parameter name so they survive checkpointing.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr);

  void step(const std::vector<TensorRef>& params, double grad_scale = 1.0);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  // State access for serialization: per-parameter slot tensors plus the
  // global step counter.
  std::map<std::string, Tensor>& slots() { return slots_; }
  const std::map<std::string, Tensor>& slots() const { return slots_; }
  long step_count() const { return step_count_; }
  void set_step_count(long t) { step_count_ = t; }

  // Adam defaults.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // SGD momentum.
  double momentum = 0.9;

 private:
  OptimizerKind kind_;
  double lr_;
  long step_count_ = 0;
  std::map<std::string, Tensor> slots_;
};

}  // namespace panoloc
