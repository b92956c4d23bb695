#include <benchmark/benchmark.h>

#include "perfid/align.hpp"
#include "perfid/dataset.hpp"
#include "perfid/features.hpp"
#include "perfid/nn/graph.hpp"
#include "perfid/nn/model.hpp"

using namespace perfid;

namespace {

nn::Tensor<float> random_tensor(nn::Shape shape, Rng& rng) {
  nn::Tensor<float> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv1dForward(benchmark::State& state) {
  const auto C = static_cast<std::size_t>(state.range(0)), L = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  nn::Parameter<float> w("w", random_tensor({C, C, 7}, rng));
  nn::Parameter<float> b("b", random_tensor({C}, rng));
  const auto x = random_tensor({16, C, L}, rng);
  for (auto _ : state) {
    nn::Graph<float> g;
    benchmark::DoNotOptimize(g.value(nn::conv1d(g, g.input(x), w, b, 1)).ptr());
  }
  state.SetItemsProcessed(state.iterations() * 16 * static_cast<std::int64_t>(L));
}
BENCHMARK(BM_Conv1dForward)->Args({16, 1000})->Args({64, 250})->Args({128, 1000})->Unit(benchmark::kMillisecond);

void BM_Conv1dBackward(benchmark::State& state) {
  const auto C = static_cast<std::size_t>(state.range(0)), L = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  nn::Parameter<float> w("w", random_tensor({C, C, 7}, rng));
  nn::Parameter<float> b("b", random_tensor({C}, rng));
  const auto x = random_tensor({16, C, L}, rng);
  for (auto _ : state) {
    nn::Graph<float> g;
    const nn::Var in = g.input(x, true);
    g.backward(nn::sum(g, nn::conv1d(g, in, w, b, 1)));
    benchmark::DoNotOptimize(w.grad.ptr());
  }
}
BENCHMARK(BM_Conv1dBackward)->Args({16, 1000})->Args({64, 250})->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  Rng rng(3);
  nn::Model<float> model(nn::ModelConfig::desk(13), 1);
  const auto x = random_tensor({16, 1000, 13}, rng);
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 6);
  for (auto _ : state) {
    model.zero_grad();
    nn::Graph<float> g;
    g.backward(nn::softmax_cross_entropy(g, model.forward(g, x, {}, nn::Mode::Train), std::span<const int>(labels)));
  }
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

void BM_Align(benchmark::State& state) {
  Rng rng(4);
  const NoteList score = generate_score(static_cast<std::size_t>(state.range(0)), rng);
  PianistStyle style{"bench"};
  style.tempo_amplitude = 0.15;
  style.jitter = 0.02;
  style.extra_rate = 0.03;
  style.missing_rate = 0.03;
  const NoteList perf = render_performance(score, style, rng);
  for (auto _ : state) benchmark::DoNotOptimize(align(perf, score).pairs.size());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Align)->RangeMultiplier(2)->Range(500, 4000)->Unit(benchmark::kMillisecond)->Complexity();

void BM_Features(benchmark::State& state) {
  Rng rng(5);
  const NoteList score = generate_score(2000, rng);
  PianistStyle style{"bench"};
  style.velocity_spread = 8.0;
  const NoteList perf = render_performance(score, style, rng);
  const auto pairs = filter_matched(align(perf, score), perf, score);
  for (auto _ : state) benchmark::DoNotOptimize(assemble(pairs, "C5").values.data());
}
BENCHMARK(BM_Features)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
