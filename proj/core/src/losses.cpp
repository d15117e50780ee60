#include "panoloc/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace panoloc {

namespace {

// Accumulates s * d‖a-b‖/da into ga (and the negated value into gb).
// At coincident points the distance has no unique gradient; zero is used.
void add_distance_grad(const Tensor& a, const Tensor& b, double d, double s, Tensor* ga,
                       Tensor* gb) {
  if (d <= 0.0) return;
  const double inv = s / d;
  for (long i = 0; i < a.numel(); ++i) {
    const double diff = (a[i] - b[i]) * inv;
    if (ga) (*ga)[i] += diff;
    if (gb) (*gb)[i] -= diff;
  }
}

}  // namespace

TupleGrads TupleGrads::zeros_like(const DescriptorTuple& t) {
  TupleGrads g;
  g.image_anchor.resize(t.image_anchor.shape());
  g.image_positive.resize(t.image_positive.shape());
  g.point_anchor.resize(t.point_anchor.shape());
  g.point_positive.resize(t.point_positive.shape());
  g.image_negatives.resize(t.image_negatives.size());
  for (size_t i = 0; i < t.image_negatives.size(); ++i) {
    g.image_negatives[i].resize(t.image_negatives[i].shape());
  }
  g.point_negatives.resize(t.point_negatives.size());
  for (size_t i = 0; i < t.point_negatives.size(); ++i) {
    g.point_negatives[i].resize(t.point_negatives[i].shape());
  }
  return g;
}

double euclidean(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("euclidean: shape mismatch");
  double sq = 0.0;
  for (long i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

double triplet_term(const Tensor& anchor, const Tensor& positive,
                    const std::vector<Tensor>& negatives, double margin, Tensor* grad_anchor,
                    Tensor* grad_positive, std::vector<Tensor>* grad_negatives, double scale) {
  if (negatives.empty()) throw std::invalid_argument("triplet_term: empty negatives set");
  const double d_ap = euclidean(anchor, positive);
  const double inv_n = 1.0 / static_cast<double>(negatives.size());

  double loss = 0.0;
  for (size_t i = 0; i < negatives.size(); ++i) {
    const double d_an = euclidean(anchor, negatives[i]);
    const double hinge = d_ap - d_an + margin;
    if (hinge <= 0.0) continue;
    loss += hinge * inv_n;
    if (grad_anchor || grad_positive || grad_negatives) {
      const double s = scale * inv_n;
      add_distance_grad(anchor, positive, d_ap, s, grad_anchor, grad_positive);
      Tensor* gn = grad_negatives ? &(*grad_negatives)[i] : nullptr;
      add_distance_grad(anchor, negatives[i], d_an, -s, grad_anchor, gn);
    }
  }
  return loss;
}

double cross_modal_loss(const DescriptorTuple& t, double margin, TupleGrads* grads, double scale) {
  double loss = triplet_term(t.image_anchor, t.point_positive, t.point_negatives, margin,
                             grads ? &grads->image_anchor : nullptr,
                             grads ? &grads->point_positive : nullptr,
                             grads ? &grads->point_negatives : nullptr, scale);
  loss += triplet_term(t.point_anchor, t.image_positive, t.image_negatives, margin,
                       grads ? &grads->point_anchor : nullptr,
                       grads ? &grads->image_positive : nullptr,
                       grads ? &grads->image_negatives : nullptr, scale);
  return loss;
}

double same_modal_loss(const DescriptorTuple& t, double margin, TupleGrads* grads, double scale) {
  double loss = triplet_term(t.image_anchor, t.image_positive, t.image_negatives, margin,
                             grads ? &grads->image_anchor : nullptr,
                             grads ? &grads->image_positive : nullptr,
                             grads ? &grads->image_negatives : nullptr, scale);
  loss += triplet_term(t.point_anchor, t.point_positive, t.point_negatives, margin,
                       grads ? &grads->point_anchor : nullptr,
                       grads ? &grads->point_positive : nullptr,
                       grads ? &grads->point_negatives : nullptr, scale);
  return loss;
}

double anchor_loss(const DescriptorTuple& t, TupleGrads* grads, double scale) {
  const double d = euclidean(t.image_anchor, t.point_anchor);
  if (grads) {
    add_distance_grad(t.image_anchor, t.point_anchor, d, scale, &grads->image_anchor,
                      &grads->point_anchor);
  }
  return d;
}

LossBreakdown total_loss(const DescriptorTuple& t, const LossWeights& w, TupleGrads* grads) {
  LossBreakdown out;
  out.cross_modal = cross_modal_loss(t, w.margin, grads, w.mu);
  out.same_modal = same_modal_loss(t, w.margin, grads, w.lambda);
  out.anchor = anchor_loss(t, grads, w.nu);
  out.total = w.mu * out.cross_modal + w.lambda * out.same_modal + w.nu * out.anchor;
  return out;
}

}  // namespace panoloc
