#pragma once

#include <vector>

#include "panoloc/tensor.hpp"

namespace panoloc {

// Anchor/positive/negative descriptors for one training place, both
// modalities. All descriptors are unit-norm D-vectors.
struct DescriptorTuple {
  Tensor image_anchor;
  Tensor image_positive;
  std::vector<Tensor> image_negatives;
  Tensor point_anchor;
  Tensor point_positive;
  std::vector<Tensor> point_negatives;
};

// Gradients w.r.t. every descriptor in a tuple; shapes mirror the tuple.
struct TupleGrads {
  Tensor image_anchor;
  Tensor image_positive;
  std::vector<Tensor> image_negatives;
  Tensor point_anchor;
  Tensor point_positive;
  std::vector<Tensor> point_negatives;

  static TupleGrads zeros_like(const DescriptorTuple& t);
};

struct LossWeights {
  double mu = 1.0;      // cross-modal term
  double lambda = 0.1;  // same-modal term
  double nu = 1.0;      // anchor term
  double margin = 0.5;
};

struct LossBreakdown {
  double cross_modal = 0.0;
  double same_modal = 0.0;
  double anchor = 0.0;
  double total = 0.0;
};

double euclidean(const Tensor& a, const Tensor& b);

// Mean over negatives of the hinge [d(a,p) - d(a,n_i) + m]_+ .
// When grads are supplied they are accumulated (scaled by `scale`).
double triplet_term(const Tensor& anchor, const Tensor& positive,
                    const std::vector<Tensor>& negatives, double margin,
                    Tensor* grad_anchor = nullptr, Tensor* grad_positive = nullptr,
                    std::vector<Tensor>* grad_negatives = nullptr, double scale = 1.0);

// L_ItoP + L_PtoI: image anchor against point positive/negatives and
// point anchor against image positive/negatives.
double cross_modal_loss(const DescriptorTuple& t, double margin, TupleGrads* grads = nullptr,
                        double scale = 1.0);

// Within-modality triplets for both branches.
double same_modal_loss(const DescriptorTuple& t, double margin, TupleGrads* grads = nullptr,
                       double scale = 1.0);

// Euclidean distance between the two anchors' descriptors.
double anchor_loss(const DescriptorTuple& t, TupleGrads* grads = nullptr, double scale = 1.0);

// mu * L_CM + lambda * L_SM + nu * L_anchor.
LossBreakdown total_loss(const DescriptorTuple& t, const LossWeights& w,
                         TupleGrads* grads = nullptr);

}  // namespace panoloc
