#include <trolldet/gradcheck.hpp>
#include <trolldet/metrics.hpp>
#include <trolldet/model.hpp>

#include <benchmark/benchmark.h>

using namespace trolldet;

namespace {

void BM_Forward(benchmark::State& state) {
  const auto pathway = static_cast<PathwayKind>(state.range(0));
  const auto encoder = static_cast<EncoderKind>(state.range(1));
  GradCheckConfig config;
  config.max_len = 32;
  config.embed_dim = 32;
  config.hidden_dim = 16;
  config.d_model = 32;
  config.batch_size = 16;
  config.vocab_size = 200;
  std::vector<Example> batch;
  const ModelAssembly model = make_toy_assembly(pathway, encoder, config, batch);
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
  state.SetLabel(to_string(pathway) + "/" + to_string(encoder));
}
BENCHMARK(BM_Forward)->ArgsProduct({{0, 1, 2}, {0, 1, 2}})->Unit(benchmark::kMicrosecond);

void BM_Backward(benchmark::State& state) {
  const auto encoder = static_cast<EncoderKind>(state.range(0));
  GradCheckConfig config;
  config.max_len = 32;
  config.embed_dim = 32;
  config.d_model = 32;
  config.batch_size = 16;
  config.vocab_size = 200;
  std::vector<Example> batch;
  ModelAssembly model = make_toy_assembly(PathwayKind::kStaticTable, encoder, config, batch);
  for (auto _ : state) benchmark::DoNotOptimize(backward(model, batch));
  state.SetLabel(to_string(encoder));
}
BENCHMARK(BM_Backward)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_Auc(benchmark::State& state) {
  Rng rng(5);
  std::vector<ScoredExample> scored(static_cast<std::size_t>(state.range(0)));
  for (auto& s : scored) {
    s.score = rng.uniform();
    s.label = static_cast<int>(rng.below(2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(scored));
}
BENCHMARK(BM_Auc)->Range(64, 8192);

void BM_GradientSuite(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(run_gradient_suite());
}
BENCHMARK(BM_GradientSuite)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
