#include "panoloc/optim.hpp"

#include <cmath>

namespace panoloc {

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

void Optimizer::step(const std::vector<TensorRef>& params, double grad_scale) {
  ++step_count_;
  if (kind_ == OptimizerKind::kAdam) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (const auto& p : params) {
      Tensor& m = slots_[p.name + ".m"];
      Tensor& v = slots_[p.name + ".v"];
      if (m.numel() != p.value->numel()) m.resize(p.value->shape());
      if (v.numel() != p.value->numel()) v.resize(p.value->shape());
      for (long i = 0; i < p.value->numel(); ++i) {
        const double g = (*p.grad)[i] * grad_scale;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        (*p.value)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
      }
    }
  } else {
    for (const auto& p : params) {
      Tensor& vel = slots_[p.name + ".vel"];
      if (vel.numel() != p.value->numel()) vel.resize(p.value->shape());
      for (long i = 0; i < p.value->numel(); ++i) {
        const double g = (*p.grad)[i] * grad_scale;
        vel[i] = momentum * vel[i] + g;
        (*p.value)[i] -= lr_ * vel[i];
      }
    }
  }
}

}  // namespace panoloc
