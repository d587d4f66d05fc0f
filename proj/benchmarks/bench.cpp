#include <benchmark/benchmark.h>

#include "dipa/autodiff/ops.hpp"
#include "dipa/data/synthetic.hpp"
#include "dipa/model/protopnet.hpp"
#include "dipa/model/push.hpp"
#include "dipa/rng.hpp"
#include "dipa/service/pca.hpp"

namespace {

using namespace dipa;

ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  ad::Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = ad::Value::parameter(random_tensor({8, c, 32, 32}, 1));
  auto w = ad::Value::parameter(random_tensor({2 * c, c, 3, 3}, 2));
  auto b = ad::Value::parameter(random_tensor({2 * c}, 3));
  for (auto _ : state) {
    auto y = ad::sum(ad::conv2d(x, w, b, {2, 1}));
    ad::backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(3)->Arg(16);

void BM_PairwiseSqDist(benchmark::State& state) {
  const auto m = state.range(0);
  auto a = ad::Value::constant(random_tensor({m, 32}, 4));
  auto p = ad::Value::constant(random_tensor({30, 32}, 5));
  for (auto _ : state) benchmark::DoNotOptimize(ad::pairwise_sq_dist(a, p).data().data());
  state.SetItemsProcessed(state.iterations() * m * 30);
}
BENCHMARK(BM_PairwiseSqDist)->Arg(49)->Arg(49 * 32);

void BM_Push(benchmark::State& state) {
  data::SyntheticSpec spec;
  spec.train_per_class = static_cast<int>(state.range(0));
  spec.test_per_class = 1;
  const auto ds = data::generate(spec, 7);
  model::ProtoPNet net(model::ModelConfig{}, 7);
  const auto latents = net.encoder().encode_all(ds.train);
  for (auto _ : state) {
    auto protos = net.prototypes();
    protos.vectors = ad::Value::parameter(net.prototypes().vectors.data());
    benchmark::DoNotOptimize(model::push(protos, latents, ds.train).records.data());
  }
}
BENCHMARK(BM_Push)->Arg(20)->Arg(120)->Unit(benchmark::kMillisecond);

void BM_Pca3(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto t = random_tensor({n, 32}, 8);
  const std::vector<float> v(t.values().begin(), t.values().end());
  for (auto _ : state) benchmark::DoNotOptimize(service::pca3(v, n, 32).coords.data());
}
BENCHMARK(BM_Pca3)->Arg(30)->Arg(300);

}  // namespace

BENCHMARK_MAIN();
