#pragma once

#include <random>
#include <vector>

#include "panoloc/layers.hpp"
#include "panoloc/tensor.hpp"

namespace panoloc {

// Learnable VLAD aggregation: per cluster k, the soft-assignment-weighted sum
// of residuals between local features and the cluster center,
//   g_k = sum_i softmax_k(w . u_i + b) * (u_i - c_k).

struct VladCoreParams {
  Tensor centers;   // K x C
  Tensor assign_w;  // K x C
  Tensor assign_b;  // K
};

// features: M x C (one local feature per row), M >= 1. Returns G (K x C).
// If `assign_out` is non-null it receives the M x K soft-assignment matrix
// (each row sums to 1).
Tensor netvlad(const Tensor& features, const VladCoreParams& p, Tensor* assign_out = nullptr);

// Intra-normalizes each cluster row of G, L2-normalizes the flattened vector,
// applies fc_weight (D x K*C) and L2-normalizes again. Rejects all-zero G.
Tensor compress_normalize(const Tensor& g, const Tensor& fc_weight);

// Aggregation head used by both branches: NetVLAD over the local feature map,
// then compression to a D-dimensional unit-norm global descriptor.
class NetVladHead : public Module {
 public:
  NetVladHead(long channels, long clusters, long out_dim);

  // x: B x C x H x W (image) or B x C x N x 1 (points); spatial positions are
  // flattened to the local feature set. Returns B x out_dim descriptors.
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gv);

  void init(std::mt19937_64& rng);
  // Optional warm start: Lloyd's k-means over a sample of local features
  // (rows of `sample`), then assignment parameters derived from the centers.
  void init_kmeans(const Tensor& sample, std::mt19937_64& rng, int iterations = 10);

  void collect_state(const std::string& prefix, std::vector<TensorRef>& out) override;

  long clusters() const { return K_; }
  long channels() const { return C_; }
  long out_dim() const { return D_; }

  Parameter centers;   // K x C
  Parameter assign_w;  // K x C
  Parameter assign_b;  // K
  Parameter fc;        // D x (K*C)

 private:
  struct ItemCache {
    Tensor assign;   // M x K
    Tensor g;        // K x C
    Tensor row_norm; // K
    Tensor intra;    // K x C, rows normalized
    double flat_norm = 0.0;
    Tensor v1;       // K*C, unit
    Tensor y;        // D, pre final normalization
    double y_norm = 0.0;
  };

  long C_, K_, D_;
  Tensor cached_input_;
  std::vector<ItemCache> cache_;
};

}  // namespace panoloc
