#include <benchmark/benchmark.h>

#include <random>

#include "panoloc/embedding.hpp"
#include "panoloc/layers.hpp"
#include "panoloc/netvlad.hpp"
#include "panoloc/retrieval.hpp"
#include "panoloc/sphere_grid.hpp"

using namespace panoloc;

namespace {

Tensor unit_vec(std::mt19937_64& rng, long d) {
  Tensor v = Tensor::randn({d}, rng);
  double n = 0.0;
  for (long i = 0; i < d; ++i) n += v[i] * v[i];
  n = std::sqrt(n);
  for (long i = 0; i < d; ++i) v[i] /= n;
  return v;
}

}  // namespace

static void BM_GnomonicGridBuild(benchmark::State& state) {
  const long H = state.range(0);
  for (auto _ : state) {
    SamplingGrid grid(H, 2 * H, 3, 3);
    benchmark::DoNotOptimize(grid.row_coord(0, 0, 0));
  }
}
BENCHMARK(BM_GnomonicGridBuild)->Arg(128)->Arg(512);

static void BM_SphericalConvForward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const long H = state.range(0);
  Conv2d conv(16, 16, 3, 1, Sampling::kSpherical);
  conv.init_kaiming(rng);
  conv.set_training(false);
  Tensor x = Tensor::randn({1, 16, H, 2 * H}, rng);
  conv.forward(x);  // warm the grid cache
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x));
  }
}
BENCHMARK(BM_SphericalConvForward)->Arg(16)->Arg(64);

static void BM_PlanarConvForward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const long H = state.range(0);
  Conv2d conv(16, 16, 3, 1, Sampling::kPlanar);
  conv.init_kaiming(rng);
  conv.set_training(false);
  Tensor x = Tensor::randn({1, 16, H, 2 * H}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x));
  }
}
BENCHMARK(BM_PlanarConvForward)->Arg(16)->Arg(64);

static void BM_NetVladForward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  NetVladHead head(128, 16, 64);
  head.init(rng);
  head.set_training(false);
  Tensor x = Tensor::randn({1, 128, state.range(0), 1}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(head.forward(x));
  }
}
BENCHMARK(BM_NetVladForward)->Arg(1024)->Arg(4096);

static void BM_ImageBranchForward(benchmark::State& state) {
  std::mt19937_64 rng(4);
  ImageBranchConfig cfg;
  cfg.input_h = 128;
  cfg.input_w = 256;
  cfg.widths = {8, 16, 32, 64};
  cfg.se_reduction = 16;
  cfg.clusters = 16;
  cfg.descriptor_dim = 64;
  ImageBranch branch(cfg);
  branch.init(rng);
  branch.set_training(false);
  Tensor x = Tensor::randn({1, 3, 128, 256}, rng);
  branch.forward(x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(branch.forward(x));
  }
}
BENCHMARK(BM_ImageBranchForward);

static void BM_RetrievalQuery(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const long n = state.range(0);
  std::vector<DbEntry> entries;
  for (long i = 0; i < n; ++i) {
    DbEntry e;
    e.id = i;
    e.descriptor = unit_vec(rng, 256);
    entries.push_back(std::move(e));
  }
  RetrievalDatabase db(std::move(entries));
  const Tensor q = unit_vec(rng, 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(db.query_topk(q, 25));
  }
}
BENCHMARK(BM_RetrievalQuery)->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
