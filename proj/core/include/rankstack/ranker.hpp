#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rankstack/catalog.hpp"
#include "rankstack/domain.hpp"
#include "rankstack/encoder.hpp"
#include "rankstack/retrieval.hpp"  // TrainReport

namespace rankstack {

// Serving-time blend weights per prediction head. Non-negative, at least one
// positive; rankings are invariant to scaling all weights together.
struct HeadWeights {
  std::array<double, kNumActionTypes> w = {1.0, 2.0, 3.0, 4.0};

  void validate() const;
  double operator[](ActionType t) const { return w[static_cast<size_t>(t)]; }
};

double blend(const std::map<ActionType, double>& head_probs,
             const HeadWeights& weights);

// Clamped binary cross entropy summed over heads, averaged over examples.
// probs is [N x H] in (0,1); labels is the matching 0/1 tensor.
nn::Value multi_task_loss(nn::Tape& t, nn::Value probs,
                          const nn::Tensor& labels);

struct RankerConfig {
  EncoderConfig encoder = EncoderConfig::ranker_default();
  bool position_branch = true;
  int head_hidden = 128;
  int pos_hidden = 16;
  double serve_position = 0.0;  // fixed p0 at serving time
  int epochs = 2;
  double lr = 0.001;
  int neg_ratio = 4;
  int batch_size = 4;
  int num_threads = 0;
  size_t max_examples = 50000;  // cap on pages used per training run
  uint64_t seed = 1;
};

// One pointwise multi-task training example: candidates from a logged page
// with per-head labels and the displayed positions.
struct RankingExample {
  CustomerSequence history;
  GlobalContext global;
  LocalContext local;
  std::vector<ItemId> candidates;
  std::vector<std::array<uint8_t, kNumActionTypes>> labels;
  std::vector<int> positions;
};

// positives plus neg_ratio sampled non-interacted page items per request;
// requests without positives are dropped
std::vector<RankingExample> build_ranking_examples(
    const std::vector<Event>& events,
    const std::vector<RequestRecord>& requests, int neg_ratio, uint64_t seed);

// Serving cache: per-item content embeddings and per-head item-side FFN
// outputs in 32-bit precision.
struct RankerItemCache {
  int d_model = 0;
  int num_heads = 0;
  std::unordered_map<ItemId, int> row_of;
  std::vector<float> content;    // [N x d_model]
  std::vector<float> head_item;  // [H][N x d_model], head-major

  const float* content_row(int row) const {
    return content.data() + static_cast<size_t>(row) * d_model;
  }
  const float* head_row(int head, int row) const {
    return head_item.data() +
           (static_cast<size_t>(head) * (content.size() / d_model) +
            static_cast<size_t>(row)) *
               d_model;
  }
};

class RankerModel {
public:
  RankerModel(RankerConfig cfg, VocabSpec vocab, std::string version);

  const RankerConfig& config() const { return cfg_; }
  const std::string& version() const { return version_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  Timestamp train_origin() const { return train_origin_; }

  void init(const CatalogIndex& catalog, Rng& rng);

  // Exact scoring path. Observed positions feed the position branch when
  // given; otherwise every candidate is scored at the fixed serving position
  // and the result is bitwise independent of any display positions.
  std::vector<ScoredItem> score_candidates(
      const CustomerSequence& seq, const GlobalContext& g,
      const LocalContext& l, std::span<const ItemId> candidates,
      const CatalogIndex& catalog,
      std::optional<std::span<const int>> observed_positions = {}) const;

  // f32 serving path against a prebuilt item cache (fixed position p0)
  std::vector<ScoredItem> score_with_cache(
      const CustomerSequence& seq, const GlobalContext& g,
      const LocalContext& l, std::span<const ItemId> candidates,
      const CatalogIndex& catalog, const RankerItemCache& cache) const;

  RankerItemCache build_item_cache(const CatalogIndex& catalog) const;

  TrainReport train(const std::vector<RankingExample>& examples,
                    const CatalogIndex& catalog,
                    const std::function<void(int, double)>& on_epoch = {});

  void save(const std::string& checkpoint_path,
            const std::string& meta_path) const;
  static RankerModel load(const std::string& checkpoint_path,
                          const std::string& meta_path);

  nn::Value build_example_loss(nn::Tape& t, nn::ParameterStore& store,
                               const RankingExample& ex,
                               const CatalogIndex& catalog) const;

private:
  nn::Value head_ffn(nn::Tape& t, nn::ParameterStore& store, nn::Value x,
                     const std::string& prefix) const;
  nn::Value position_offset(nn::Tape& t, nn::ParameterStore& store,
                            std::span<const double> normalized_positions) const;
  // probs [K x H] for one example on the tape
  nn::Value probs_on_tape(nn::Tape& t, nn::ParameterStore& store,
                          const RankingExample& ex, const CatalogIndex& catalog,
                          bool use_observed_positions) const;

  RankerConfig cfg_;
  VocabSpec vocab_;
  SequenceEncoder encoder_;
  nn::ParameterStore store_;
  std::string version_;
  Timestamp train_origin_ = 0;
};

}  // namespace rankstack
