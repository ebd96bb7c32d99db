#include <benchmark/benchmark.h>

#include "convrisk/baselines.hpp"
#include "convrisk/evaluation.hpp"
#include "convrisk/microlm/model.hpp"
#include "convrisk/microlm/training.hpp"
#include "convrisk/rng.hpp"

using namespace convrisk;

namespace {

struct Fixture {
  QuestionnaireSchema schema = default_schema();
  Tokenizer tok = Tokenizer::for_schema(schema);
  microlm::MicroLMWeights weights;
  std::vector<PatientRecord> records;
  std::vector<SerializedPrompt> prompts;

  Fixture() {
    microlm::MicroLMConfig c;
    c.vocab_size = tok.size();
    weights = microlm::MicroLMWeights::initialize(c, 1);
    const std::vector<double> w{0, 0, 0, 0, 0, 0, 0, 0, 1.5, 0, 0, 1.5, 2, 1, 2.5};
    records = generate_synthetic_dataset(393, schema, 1, 0.28, w);
    for (const auto& r : records) prompts.push_back(serialize(r, schema, TemplateKind::Text, tok));
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

void BM_Forward(benchmark::State& state) {
  const auto& p = fx().prompts[0];
  for (auto _ : state) benchmark::DoNotOptimize(microlm::forward(fx().weights, nullptr, p.token_ids));
  state.counters["tokens"] = static_cast<double>(p.token_ids.size());
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_ScoreWithAdapter(benchmark::State& state) {
  const auto adapter = microlm::LoraAdapter::initialize(fx().weights.config, {}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(microlm::score(fx().weights, &adapter, fx().prompts[1]));
}
BENCHMARK(BM_ScoreWithAdapter)->Unit(benchmark::kMillisecond);

void BM_Explain(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(microlm::explain(fx().weights, nullptr, fx().prompts[2]));
}
BENCHMARK(BM_Explain)->Unit(benchmark::kMillisecond);

void BM_FinetuneStep(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  std::vector<microlm::TrainingExample> shots;
  for (std::size_t i = 0; i < k; ++i)
    shots.push_back(microlm::make_example(fx().prompts[i], static_cast<std::uint8_t>(i % 2)));
  microlm::TrainingHyper h;
  h.steps = 1;
  for (auto _ : state) benchmark::DoNotOptimize(microlm::finetune_lora(fx().weights, shots, {}, {}, h));
}
BENCHMARK(BM_FinetuneStep)->Arg(2)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Auc(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    s.push_back(rng.uniform());
    y.push_back(static_cast<std::uint8_t>(i % 2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluation::auc(s, y));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Auc)->RangeMultiplier(8)->Range(64, 1 << 15)->Complexity(benchmark::oNLogN);

void BM_BaselineFit(benchmark::State& state) {
  const auto kind = static_cast<baselines::BaselineKind>(state.range(0));
  const auto X = baselines::feature_matrix(fx().records);
  const auto y = labels_of(fx().records);
  for (auto _ : state) benchmark::DoNotOptimize(baselines::fit(kind, X, y, {}, 0));
  state.SetLabel(std::string(baselines::to_string(kind)));
}
BENCHMARK(BM_BaselineFit)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
