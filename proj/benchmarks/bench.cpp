#include <benchmark/benchmark.h>

#include "pvpl/checkpoint.hpp"
#include "pvpl/evalkit.hpp"
#include "pvpl/ops.hpp"
#include "pvpl/pipeline.hpp"
#include "pvpl/rng.hpp"

namespace {

using namespace pvpl;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(shape_size(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor(std::move(shape), std::move(v));
}

struct World {
  PipelineConfig config;
  FrozenDualEncoder enc;
  std::vector<CorpusRecord> records;
  std::vector<EncodedText> corpus;
  std::vector<LabeledImage> images;
  PvpBank bank;

  World() : enc(build_encoder(config)) {
    records = build_corpus(config, config.stages).records;
    corpus = encode_records(enc, records);
    images = eval_images(config, enc);
    const auto& d = enc.dims();
    bank = init_bank(enc.num_classes(), d.image, d.image, stage_seed(config, SeedStream::pvp_init), d);
  }
};

const World& world() {
  static const World w;
  return w;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  a.set_requires_grad(true);
  for (auto _ : state) {
    a.zero_grad();
    backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

void BM_EncodeText(benchmark::State& state) {
  const auto& w = world();
  const auto ids = w.enc.tokenize(w.records.front().sentence);
  for (auto _ : state) benchmark::DoNotOptimize(w.enc.encode_text(ids));
}
BENCHMARK(BM_EncodeText);

void BM_EncodeImage(benchmark::State& state) {
  const auto& w = world();
  for (auto _ : state) benchmark::DoNotOptimize(w.enc.encode_image(w.images.front().image));
}
BENCHMARK(BM_EncodeImage);

void BM_PvpEpoch(benchmark::State& state) {
  const auto& w = world();
  auto cfg = pvp_config(w.config);
  cfg.epochs = 1;
  const std::vector<EncodedText> head(w.corpus.begin(), w.corpus.begin() + 256);
  for (auto _ : state) {
    auto bank = w.bank;
    benchmark::DoNotOptimize(train_pvp(w.enc, bank, head, cfg));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_PvpEpoch)->Unit(benchmark::kMillisecond);

void BM_TpcLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ft = l2_normalize_rows(random_tensor({n, 64}, 3));
  const auto fi = l2_normalize_rows(random_tensor({n, 64}, 4));
  for (auto _ : state) benchmark::DoNotOptimize(tpc_loss(ft, fi, 0.07f));
}
BENCHMARK(BM_TpcLoss)->Arg(8)->Arg(80);

void BM_AveragePrecision(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<double> s(n);
  std::vector<bool> rel(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.normal();
    rel[i] = rng.uniform() < 0.3;
  }
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(s, rel));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_AveragePrecision)->Arg(200)->Arg(10000);

void BM_ScoreImages(benchmark::State& state) {
  const auto& w = world();
  const auto tc = transfer_config(w.config, w.config.stages);
  const auto prompts = init_prompts(w.enc, w.config.categories, tc.context_length, 1);
  const auto adapter = init_adapter(w.enc.dims().latent, tc);
  auto settings = eval_settings(w.config, w.config.stages);
  settings.threads = static_cast<std::size_t>(state.range(0));
  const auto clf = PromptClassifier::build(w.enc, prompts, adapter, settings);
  for (auto _ : state) benchmark::DoNotOptimize(score_images(w.enc, clf, w.images));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(w.images.size()));
}
BENCHMARK(BM_ScoreImages)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_CheckpointRoundTrip(benchmark::State& state) {
  const auto& w = world();
  Checkpoint ck;
  ck.put(w.enc.parameters());
  ck.put(w.bank.named());
  for (auto _ : state) benchmark::DoNotOptimize(decode_checkpoint(encode_checkpoint(ck)));
}
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
