#include <benchmark/benchmark.h>

#include "dcspp/layers.hpp"
#include "dcspp/random.hpp"

namespace {

using dcspp::ConvParams;
using dcspp::Shape;
using dcspp::Tensor;

Tensor random_tensor(Shape s, std::uint64_t seed) {
  dcspp::Rng rng(seed);
  Tensor t(s);
  for (float& v : t.data()) v = static_cast<float>(dcspp::uniform(rng, -1, 1));
  return t;
}

ConvParams<float> random_conv(int in_c, int out_c, int k) {
  ConvParams<float> p(in_c, out_c, k);
  p.weights = random_tensor(p.weights.shape(), 2);
  return p;
}

// args: channels in/out, spatial size, kernel
void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const int k = static_cast<int>(state.range(2));
  const ConvParams<float> p = random_conv(c, c, k);
  const Tensor x = random_tensor(Shape{1, c, hw, hw}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(dcspp::conv2d_forward(x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c) * c * hw * hw * k * k);
}
BENCHMARK(BM_ConvForward)->Args({16, 48, 3})->Args({64, 12, 3})->Args({128, 3, 1})->Args({32, 96, 3});

void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const ConvParams<float> p = random_conv(c, c, 3);
  const Tensor x = random_tensor(Shape{1, c, hw, hw}, 1);
  const Tensor g = random_tensor(Shape{1, c, hw, hw}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(dcspp::conv2d_backward(g, x, p));
}
BENCHMARK(BM_ConvBackward)->Args({16, 48})->Args({64, 12});

}  // namespace
