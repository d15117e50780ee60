#include "panoloc/netvlad.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace panoloc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kNormEps = 1e-12;
constexpr double kAssignAlpha = 1.0;

// Softmax over the K entries of each row, in place.
void row_softmax(RowMat& m) {
  for (long r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

Tensor netvlad(const Tensor& features, const VladCoreParams& p, Tensor* assign_out) {
  if (features.rank() != 2 || features.dim(0) < 1) {
    throw std::invalid_argument("netvlad: expected nonempty M x C feature matrix");
  }
  const long M = features.dim(0), C = features.dim(1);
  const long K = p.centers.dim(0);
  if (p.centers.dim(1) != C || p.assign_w.shape() != p.centers.shape() ||
      p.assign_b.numel() != K) {
    throw std::invalid_argument("netvlad: parameter dimensions inconsistent");
  }
  ConstMatMap U(features.data(), M, C);
  ConstMatMap Ck(p.centers.data(), K, C);
  ConstMatMap Wk(p.assign_w.data(), K, C);

  RowMat A = U * Wk.transpose();
  for (long k = 0; k < K; ++k) A.col(k).array() += p.assign_b[k];
  row_softmax(A);

  Tensor g({K, C});
  MatMap G(g.data(), K, C);
  G.noalias() = A.transpose() * U;
  const Eigen::VectorXd mass = A.colwise().sum();
  for (long k = 0; k < K; ++k) G.row(k) -= mass[k] * Ck.row(k);

  if (assign_out) {
    assign_out->resize({M, K});
    MatMap(assign_out->data(), M, K) = A;
  }
  return g;
}

Tensor compress_normalize(const Tensor& g, const Tensor& fc_weight) {
  if (g.rank() != 2) throw std::invalid_argument("compress_normalize: expected K x C input");
  const long K = g.dim(0), C = g.dim(1);
  if (fc_weight.rank() != 2 || fc_weight.dim(1) != K * C) {
    throw std::invalid_argument("compress_normalize: fc weight does not match K*C");
  }
  const long D = fc_weight.dim(0);

  Tensor flat({K * C});
  for (long k = 0; k < K; ++k) {
    double norm = 0.0;
    for (long c = 0; c < C; ++c) norm += g(k, c) * g(k, c);
    norm = std::sqrt(norm);
    if (norm > kNormEps) {
      for (long c = 0; c < C; ++c) flat[k * C + c] = g(k, c) / norm;
    }
  }
  double fnorm = 0.0;
  for (long i = 0; i < K * C; ++i) fnorm += flat[i] * flat[i];
  fnorm = std::sqrt(fnorm);
  if (fnorm <= kNormEps) {
    throw std::domain_error("compress_normalize: all-zero aggregate has no direction");
  }
  for (long i = 0; i < K * C; ++i) flat[i] /= fnorm;

  ConstMatMap W(fc_weight.data(), D, K * C);
  Eigen::Map<const Eigen::VectorXd> v1(flat.data(), K * C);
  Eigen::VectorXd y = W * v1;
  const double ynorm = y.norm();
  if (ynorm <= kNormEps) {
    throw std::domain_error("compress_normalize: projection collapsed to zero");
  }
  Tensor v({D});
  for (long d = 0; d < D; ++d) v[d] = y[d] / ynorm;
  return v;
}

NetVladHead::NetVladHead(long channels, long clusters, long out_dim)
    : C_(channels), K_(clusters), D_(out_dim) {
  if (clusters < 1) throw std::invalid_argument("NetVladHead: need at least one cluster");
  centers.setup({K_, C_});
  assign_w.setup({K_, C_});
  assign_b.setup({K_});
  fc.setup({D_, K_ * C_});
}

void NetVladHead::init(std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (long k = 0; k < K_; ++k) {
    double norm = 0.0;
    for (long c = 0; c < C_; ++c) {
      const double v = dist(rng);
      centers.value(k, c) = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (long c = 0; c < C_; ++c) {
      centers.value(k, c) /= norm;
      assign_w.value(k, c) = 2.0 * kAssignAlpha * centers.value(k, c);
    }
    assign_b.value[k] = -kAssignAlpha;
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(K_ * C_ + D_));
  std::uniform_real_distribution<double> fdist(-bound, bound);
  for (double& v : fc.value.raw()) v = fdist(rng);
}

void NetVladHead::init_kmeans(const Tensor& sample, std::mt19937_64& rng, int iterations) {
  if (sample.rank() != 2 || sample.dim(1) != C_ || sample.dim(0) < K_) {
    throw std::invalid_argument("NetVladHead::init_kmeans: need at least K sample rows");
  }
  const long M = sample.dim(0);
  std::vector<long> perm(static_cast<size_t>(M));
  for (long i = 0; i < M; ++i) perm[static_cast<size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  for (long k = 0; k < K_; ++k) {
    for (long c = 0; c < C_; ++c) centers.value(k, c) = sample(perm[static_cast<size_t>(k)], c);
  }
  std::vector<long> owner(static_cast<size_t>(M), 0);
  for (int it = 0; it < iterations; ++it) {
    for (long m = 0; m < M; ++m) {
      double best = std::numeric_limits<double>::infinity();
      long arg = 0;
      for (long k = 0; k < K_; ++k) {
        double d = 0.0;
        for (long c = 0; c < C_; ++c) {
          const double diff = sample(m, c) - centers.value(k, c);
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          arg = k;
        }
      }
      owner[static_cast<size_t>(m)] = arg;
    }
    for (long k = 0; k < K_; ++k) {
      double count = 0.0;
      std::vector<double> acc(static_cast<size_t>(C_), 0.0);
      for (long m = 0; m < M; ++m) {
        if (owner[static_cast<size_t>(m)] != k) continue;
        count += 1.0;
        for (long c = 0; c < C_; ++c) acc[static_cast<size_t>(c)] += sample(m, c);
      }
      if (count > 0.0) {
        for (long c = 0; c < C_; ++c) centers.value(k, c) = acc[static_cast<size_t>(c)] / count;
      } else {
        std::uniform_int_distribution<long> pick(0, M - 1);
        const long m = pick(rng);
        for (long c = 0; c < C_; ++c) centers.value(k, c) = sample(m, c);
      }
    }
  }
  for (long k = 0; k < K_; ++k) {
    double sq = 0.0;
    for (long c = 0; c < C_; ++c) {
      assign_w.value(k, c) = 2.0 * kAssignAlpha * centers.value(k, c);
      sq += centers.value(k, c) * centers.value(k, c);
    }
    assign_b.value[k] = -kAssignAlpha * sq;
  }
}

void NetVladHead::collect_state(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "centers", &centers.value, &centers.grad});
  out.push_back({prefix + "assign_w", &assign_w.value, &assign_w.grad});
  out.push_back({prefix + "assign_b", &assign_b.value, &assign_b.grad});
  out.push_back({prefix + "fc", &fc.value, &fc.grad});
}

Tensor NetVladHead::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != C_) {
    throw std::invalid_argument("NetVladHead: expected B x C x H x W input with C = " +
                                std::to_string(C_));
  }
  const long B = x.dim(0);
  const long M = x.dim(2) * x.dim(3);
  cached_input_ = x;
  cache_.assign(static_cast<size_t>(B), ItemCache{});

  VladCoreParams p;
  p.centers = centers.value;
  p.assign_w = assign_w.value;
  p.assign_b = assign_b.value;

  Tensor out({B, D_});
  for (long b = 0; b < B; ++b) {
    ItemCache& ic = cache_[static_cast<size_t>(b)];
    // Local features: transpose the C x M slice into M x C rows.
    Tensor feats({M, C_});
    ConstMatMap xm(x.data() + b * C_ * M, C_, M);
    MatMap(feats.data(), M, C_) = xm.transpose();

    ic.g = netvlad(feats, p, &ic.assign);

    // compress_normalize, with the intermediates kept for backward.
    ic.row_norm.resize({K_});
    ic.intra.resize({K_, C_});
    for (long k = 0; k < K_; ++k) {
      double norm = 0.0;
      for (long c = 0; c < C_; ++c) norm += ic.g(k, c) * ic.g(k, c);
      norm = std::sqrt(norm);
      ic.row_norm[k] = norm;
      if (norm > kNormEps) {
        for (long c = 0; c < C_; ++c) ic.intra(k, c) = ic.g(k, c) / norm;
      }
    }
    double fnorm = 0.0;
    for (long i = 0; i < K_ * C_; ++i) fnorm += ic.intra[i] * ic.intra[i];
    fnorm = std::sqrt(fnorm);
    if (fnorm <= kNormEps) {
      throw std::domain_error("NetVladHead: all-zero aggregate has no direction");
    }
    ic.flat_norm = fnorm;
    ic.v1.resize({K_ * C_});
    for (long i = 0; i < K_ * C_; ++i) ic.v1[i] = ic.intra[i] / fnorm;

    ConstMatMap W(fc.value.data(), D_, K_ * C_);
    Eigen::Map<const Eigen::VectorXd> v1(ic.v1.data(), K_ * C_);
    Eigen::VectorXd y = W * v1;
    ic.y_norm = y.norm();
    if (ic.y_norm <= kNormEps) {
      throw std::domain_error("NetVladHead: projection collapsed to zero");
    }
    ic.y.resize({D_});
    for (long d = 0; d < D_; ++d) {
      ic.y[d] = y[d];
      out(b, d) = y[d] / ic.y_norm;
    }
  }
  return out;
}

Tensor NetVladHead::backward(const Tensor& gv) {
  const Tensor& x = cached_input_;
  const long B = x.dim(0);
  const long M = x.dim(2) * x.dim(3);
  check_shape(gv, {B, D_}, "NetVladHead::backward");

  Tensor dx(x.shape());
  ConstMatMap W(fc.value.data(), D_, K_ * C_);
  ConstMatMap Ck(centers.value.data(), K_, C_);
  ConstMatMap Wk(assign_w.value.data(), K_, C_);
  MatMap dW(fc.grad.data(), D_, K_ * C_);
  MatMap dCk(centers.grad.data(), K_, C_);
  MatMap dWk(assign_w.grad.data(), K_, C_);

  for (long b = 0; b < B; ++b) {
    const ItemCache& ic = cache_[static_cast<size_t>(b)];
    ConstMatMap xm(x.data() + b * C_ * M, C_, M);
    RowMat U = xm.transpose();  // M x C
    ConstMatMap A(ic.assign.data(), M, K_);

    // Final L2 normalization.
    Eigen::Map<const Eigen::VectorXd> yv(ic.y.data(), D_);
    Eigen::VectorXd dv(D_);
    for (long d = 0; d < D_; ++d) dv[d] = gv(b, d);
    const Eigen::VectorXd vhat = yv / ic.y_norm;
    Eigen::VectorXd dy = (dv - vhat * vhat.dot(dv)) / ic.y_norm;

    // FC layer.
    Eigen::Map<const Eigen::VectorXd> v1(ic.v1.data(), K_ * C_);
    dW.noalias() += dy * v1.transpose();
    Eigen::VectorXd dv1 = W.transpose() * dy;

    // Flat L2 normalization.
    Eigen::VectorXd dflat = (dv1 - v1 * v1.dot(dv1)) / ic.flat_norm;

    // Intra-normalization per cluster row.
    RowMat dG(K_, C_);
    for (long k = 0; k < K_; ++k) {
      const double norm = ic.row_norm[k];
      if (norm <= kNormEps) {
        dG.row(k).setZero();
        continue;
      }
      Eigen::Map<const Eigen::RowVectorXd> nk(ic.intra.data() + k * C_, C_);
      Eigen::Map<const Eigen::RowVectorXd> dfk(dflat.data() + k * C_, C_);
      dG.row(k) = (dfk - nk * nk.dot(dfk)) / norm;
    }

    // VLAD core.
    const Eigen::VectorXd mass = A.colwise().sum();
    for (long k = 0; k < K_; ++k) dCk.row(k) -= mass[k] * dG.row(k);

    RowMat dU = A * dG;  // direct residual path, M x C

    RowMat dA = U * dG.transpose();  // M x K
    for (long k = 0; k < K_; ++k) {
      const double r = dG.row(k).dot(Ck.row(k));
      dA.col(k).array() -= r;
    }
    // Softmax backward per feature row.
    RowMat dS(M, K_);
    for (long m = 0; m < M; ++m) {
      const double dot = A.row(m).dot(dA.row(m));
      dS.row(m) = A.row(m).cwiseProduct(dA.row(m).array().matrix() -
                                        Eigen::RowVectorXd::Constant(K_, dot));
    }
    dU.noalias() += dS * Wk;
    dWk.noalias() += dS.transpose() * U;
    for (long k = 0; k < K_; ++k) assign_b.grad[k] += dS.col(k).sum();

    MatMap(dx.data() + b * C_ * M, C_, M) = dU.transpose();
  }
  return dx;
}

}  // namespace panoloc
