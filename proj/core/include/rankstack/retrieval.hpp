#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "rankstack/catalog.hpp"
#include "rankstack/domain.hpp"
#include "rankstack/embedding_set.hpp"
#include "rankstack/encoder.hpp"

namespace rankstack {

// --- log-uniform class sampling ---------------------------------------------

// P(rank i) = log((i+2)/(i+1)) / log(num_classes + 1)
double log_uniform_prob(int rank, int num_classes);

// samples without replacement, never returning a rank in `exclude`;
// throws when num_samples exceeds the feasible count
std::vector<int> log_uniform_sample(int num_classes, int num_samples,
                                    const std::unordered_set<int>& exclude,
                                    Rng& rng);

// negatives per positive at the paper's ratio of the class count
int negative_sample_count(int num_classes, double fraction = 0.0042);

// Softmax cross-entropy over the sampled class set. class_rows is [K x d]
// with the positive in row 0; sample_probs are the classes' sampling
// probabilities used for the logQ logit correction (positives corrected with
// their own probability). extra_logit_bias, when non-empty, is added to the
// corrected logits (per-item popularity bias of the frozen-tower variant).
nn::Value sampled_softmax_loss(nn::Tape& t, nn::Value customer_emb,
                               nn::Value class_rows,
                               std::span<const double> sample_probs,
                               bool logq_correction,
                               std::span<const double> extra_logit_bias = {});

// --- two-tower retrieval model ------------------------------------------------

struct TwoTowerConfig {
  EncoderConfig encoder = EncoderConfig::retrieval_default();
  int d_emb = 64;
  bool trainable_item_tower = true;  // frozen variant keeps initial embeddings
  bool use_local_context = true;     // browse category, search flag, query id
  bool logq_correction = true;
  bool popularity_logit_bias = false;  // frozen-tower variant only
  double negative_fraction = 0.0042;
  int epochs = 20;
  double lr = 0.001;
  int batch_size = 32;
  int num_threads = 0;  // 0 -> hardware concurrency
  uint64_t seed = 1;
};

// One training example: the request context, the history before it, and the
// in-session target items it should predict, in interaction order.
struct RetrievalExample {
  CustomerId customer_id = 0;
  GlobalContext global;
  LocalContext local;
  std::vector<Action> history;
  std::vector<Action> targets;
};

// Builds per-request examples: history is everything strictly before the
// request, targets are the page's attributed items ordered by position.
std::vector<RetrievalExample> build_retrieval_examples(
    const std::vector<Event>& events, const std::vector<RequestRecord>& requests);

struct TrainReport {
  std::vector<double> epoch_losses;
  int adam_steps = 0;
};

class TwoTowerModel {
public:
  TwoTowerModel(TwoTowerConfig cfg, VocabSpec vocab, std::string version);

  const TwoTowerConfig& config() const { return cfg_; }
  const std::string& version() const { return version_; }
  Timestamp train_origin() const { return train_origin_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const SequenceEncoder& encoder() const { return encoder_; }

  // item tower initialization: trainable id rows seeded from the visual
  // projection, plus metadata embeddings
  void init(const CatalogIndex& catalog, Rng& rng);

  // CLM training with sampled softmax over popularity-rank classes.
  // Aborts with diagnostics if a batch loss turns non-finite.
  TrainReport train(const std::vector<RetrievalExample>& examples,
                    const CatalogIndex& catalog,
                    const std::function<void(int, double)>& on_epoch = {});

  // d_emb customer embedding; empty history is allowed (cold start)
  nn::Tensor embed_customer(const CustomerSequence& seq, const GlobalContext& g,
                            const LocalContext& l,
                            const CatalogIndex& catalog) const;

  // full item-tower output for one catalog snapshot; rows follow catalog
  // (item_id-sorted) order. Items unseen at training time fall back to the
  // visual-projection initialization plus metadata embeddings.
  nn::Tensor all_item_embeddings(const CatalogIndex& catalog) const;

  EmbeddingSet export_item_embeddings(const CatalogIndex& catalog) const;

  // metadata-only item embeddings (no id/visual part): the content-based
  // relevance stand-in used by the policy layer's fresh pool
  nn::Tensor metadata_embeddings(const CatalogIndex& catalog) const;

  // dot-product scores against every catalog item, catalog order
  std::vector<double> score_catalog(const CustomerSequence& seq,
                                    const GlobalContext& g,
                                    const LocalContext& l,
                                    const CatalogIndex& catalog) const;

  void save(const std::string& checkpoint_path,
            const std::string& meta_path) const;
  static TwoTowerModel load(const std::string& checkpoint_path,
                            const std::string& meta_path);

  // exposed for the gradient-integrity check: builds the full sampled-softmax
  // loss for one example on the given tape
  nn::Value build_example_loss(nn::Tape& t, nn::ParameterStore& store,
                               const RetrievalExample& ex,
                               const CatalogIndex& catalog, Rng& rng) const;

private:
  nn::Value customer_embedding_on_tape(nn::Tape& t, nn::ParameterStore& store,
                                       const CustomerSequence& seq,
                                       const GlobalContext& g,
                                       const LocalContext& l,
                                       const CatalogIndex& catalog) const;
  nn::Value item_rows_on_tape(nn::Tape& t, nn::ParameterStore& store,
                              std::span<const int> dense_ids,
                              const CatalogIndex& catalog) const;
  void item_embedding_row(const Item& item, double* dst) const;
  void set_train_origin(Timestamp origin) { train_origin_ = origin; }

  TwoTowerConfig cfg_;
  VocabSpec vocab_;
  SequenceEncoder encoder_;
  nn::ParameterStore store_;
  std::string version_;
  Timestamp train_origin_ = 0;
};

}  // namespace rankstack
