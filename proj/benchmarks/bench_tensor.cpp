#include <benchmark/benchmark.h>

#include "fedadapt/conformer.hpp"
#include "fedadapt/rng.hpp"
#include "fedadapt/tensor.hpp"

using namespace fedadapt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (real& v : t.values()) v = real(rng.uniform(-1, 1));
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void BM_MatmulBackward(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  for (auto _ : state) {
    state.PauseTiming();
    Tape tape;
    Tensor a = random_tensor({n, n}, rng);
    a.set_requires_grad(true);
    a.bind_tape(&tape);
    Tensor b = random_tensor({n, n}, rng);
    b.set_requires_grad(true);
    b.bind_tape(&tape);
    state.ResumeTiming();
    backward(sum(matmul(a, b)));
  }
}

void BM_EncoderForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.d_in = 16;
  cfg.d = state.range(0);
  cfg.layers = 4;
  cfg.kernel = 8;
  Tape tape;
  ParameterTree tree = build_encoder(cfg, std::nullopt, 1);
  tree.bind_tape(&tape);
  Rng rng(2);
  Tensor features = random_tensor({24, cfg.d_in}, rng);
  NoGradGuard guard(&tape);
  for (auto _ : state)
    benchmark::DoNotOptimize(encoder_forward(tree, cfg, std::nullopt, features));
}

void BM_EncoderForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.d_in = 16;
  cfg.d = state.range(0);
  cfg.layers = 4;
  cfg.kernel = 8;
  AdapterSpec spec;
  spec.variant = AdapterVariant::parallel_both;
  spec.bottleneck = cfg.d / 4;
  Tape tape;
  ParameterTree tree = build_encoder(cfg, spec, 1);
  Rng head_rng(2);
  add_decoder_head(tree, cfg, head_rng);
  tree.bind_tape(&tape);
  tree.set_freeze(FreezePolicy::freeze_all_but_adapters);
  Rng rng(3);
  Tensor features = random_tensor({24, cfg.d_in}, rng);
  std::vector<int> labels(24, 1);
  std::vector<bool> mask(24, true);
  for (auto _ : state) {
    tree.zero_grads();
    backward(softmax_xent(model_logits(tree, cfg, spec, features), labels, mask));
    tape.rewind();
  }
}

}  // namespace

BENCHMARK(BM_MatmulForward)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_MatmulBackward)->Arg(32)->Arg(64);
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(32);
