#include <benchmark/benchmark.h>

#include "rankstack/ann_index.hpp"
#include "rankstack/encoder.hpp"
#include "rankstack/synth.hpp"

using namespace rankstack;

namespace {

synth::SyntheticCorpus& bench_corpus() {
  static synth::SyntheticCorpus corpus = [] {
    synth::GeneratorConfig cfg;
    cfg.num_customers = 500;
    cfg.num_items = 1000;
    cfg.seed = 7;
    return synth::generate(cfg);
  }();
  return corpus;
}

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  auto& corpus = bench_corpus();
  CatalogIndex catalog(corpus.catalog);
  EncoderConfig cfg = EncoderConfig::retrieval_default();
  SequenceEncoder encoder(cfg, VocabSpec::from_catalog(catalog, 8, 8, 8),
                          ItemVocab::from_catalog(catalog), "enc/");
  nn::ParameterStore store;
  Rng rng(3);
  encoder.init_params(store, rng);
  CustomerSequence seq;
  seq.customer_id = 1;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i)
    seq.actions.push_back(
        {corpus.catalog[static_cast<size_t>(i % 500)].item_id,
         ActionType::kClick, 1000 + i * 30});
  for (auto _ : state) {
    nn::Tape t;
    auto tokens = encoder.build_token_sequence(t, store, seq, {1, 1}, {},
                                               catalog, 0, std::nullopt);
    auto hidden = encoder.encode(t, store, tokens);
    benchmark::DoNotOptimize(t.val(hidden).data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(24)->Arg(50)->Arg(100);

static void BM_HnswQuery(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), d = 64;
  Rng rng(11);
  EmbeddingSet set;
  set.model_version = "bench";
  set.d_emb = d;
  for (int i = 0; i < n; ++i) {
    set.ids.push_back(i + 1);
    for (int j = 0; j < d; ++j)
      set.data.push_back(static_cast<float>(rng.normal()));
  }
  auto index =
      ann::EmbeddingIndexVersion::build(set, ann::IndexMode::kApproximate,
                                        {16, 100, 64}, {});
  std::vector<double> q(d);
  for (auto& x : q) x = rng.normal();
  for (auto _ : state) {
    auto hits = index->query_topk(q, 10);
    benchmark::DoNotOptimize(hits.data());
  }
}
BENCHMARK(BM_HnswQuery)->Arg(10000)->Arg(50000);

static void BM_ExactScan(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0)), d = 64;
  Rng rng(13);
  EmbeddingSet set;
  set.model_version = "bench";
  set.d_emb = d;
  for (int i = 0; i < n; ++i) {
    set.ids.push_back(i + 1);
    for (int j = 0; j < d; ++j)
      set.data.push_back(static_cast<float>(rng.normal()));
  }
  auto index =
      ann::EmbeddingIndexVersion::build(set, ann::IndexMode::kExact, {}, {});
  std::vector<double> q(d);
  for (auto& x : q) x = rng.normal();
  for (auto _ : state) {
    auto hits = index->query_topk(q, 500);
    benchmark::DoNotOptimize(hits.data());
  }
}
BENCHMARK(BM_ExactScan)->Arg(10000)->Arg(100000);

BENCHMARK_MAIN();
