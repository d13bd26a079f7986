#pragma once

#include <array>
#include <span>
#include <map>
#include <string>
#include <vector>

#include "rankstack/domain.hpp"
#include "rankstack/rng.hpp"

namespace rankstack::synth {

struct GeneratorConfig {
  int num_customers = 10000;
  int num_items = 2000;
  int num_brands = 50;
  int num_categories = 20;
  int latent_dim = 8;
  int d_pre = 16;  // visual stand-in width

  double mean_sessions_per_customer = 4.2;  // Poisson, at least one
  int page_size = 20;
  double intent_drift = 1.0;  // per-session additive latent offset scale

  // action escalation chain; marginals order click > a2w > a2c > purchase
  double escalate_a2w = 0.35;
  double escalate_a2c = 0.55;
  double escalate_purchase = 0.5;
  double escalation_affinity = 0.8;  // stronger preference escalates more

  double popularity_exponent = 0.7;  // prior over items, power law on rank
  double fresh_item_fraction = 0.02;
  double search_fraction = 0.25;

  int num_countries = 5;
  int num_devices = 3;
  int num_colors = 8;
  int num_materials = 6;
  int num_patterns = 6;
  int queries_per_category = 8;

  // page (behavior policy) and interaction models
  double page_pref_weight = 0.4;
  double page_pop_weight = 0.15;
  double page_noise = 1.0;  // Gumbel scale on page utilities
  double page_fresh_boost = 1.2;
  double click_pref_weight = 0.5;
  double click_pop_weight = 0.03;
  double click_base = -3.6;
  double position_bias_decay = 0.12;  // bias(p) = 1 / (1 + decay * p)

  Timestamp start_time = 1'600'000'000;
  int days_total = 90;

  uint64_t seed = 42;

  void validate() const;
};

struct SessionTruth {
  CustomerId customer_id = 0;
  Timestamp t_start = 0;
  int32_t category_id = 0;
  bool is_search = false;
  int32_t query_id = 0;
  std::vector<double> intent;
};

// Hidden world state: persisted for audits and oracle scoring, never fed to
// any trained model.
struct GroundTruth {
  uint64_t seed = 0;
  int latent_dim = 0;
  std::vector<ItemId> item_ids;
  std::vector<int32_t> item_categories;
  std::vector<double> item_style;  // row-major [num_items x latent_dim]
  std::vector<SessionTruth> sessions;

  const double* style_of(size_t row) const {
    return item_style.data() + row * static_cast<size_t>(latent_dim);
  }
  // per-customer per-category taste, derived deterministically from the seed
  std::vector<double> taste(CustomerId customer, int32_t category) const;
  // session intent looked up by (customer, request time); nullptr if unknown
  const SessionTruth* session_at(CustomerId customer, Timestamp t_start) const;
  // true-preference scores <taste + intent, style> for the given items
  std::vector<double> oracle_scores(CustomerId customer, Timestamp t_start,
                                    int32_t category,
                                    std::span<const ItemId> ids) const;

  void save(const std::string& path) const;  // "RKT1" binary sidecar
  static GroundTruth load(const std::string& path);

private:
  mutable std::map<std::pair<CustomerId, Timestamp>, size_t> session_index_;
  mutable std::map<ItemId, size_t> item_index_;
  void build_indexes() const;
};

struct SyntheticCorpus {
  std::vector<Item> catalog;
  std::vector<Event> events;
  std::vector<RequestRecord> requests;
  GroundTruth truth;
};

// Deterministic under the configured seed. Interaction probabilities mix the
// planted preference structure with a popularity prior; action types escalate
// stochastically along the click -> a2w -> a2c -> purchase chain.
SyntheticCorpus generate(const GeneratorConfig& cfg);

struct CorpusFiles {
  std::string catalog;
  std::string events;
  std::string requests;
  std::string ground_truth;
};

CorpusFiles corpus_paths(const std::string& dir);
void write_corpus(const SyntheticCorpus& corpus, const CorpusFiles& files);

struct CorpusStats {
  size_t num_events = 0;
  size_t num_customers = 0;
  std::array<int64_t, kNumActionTypes> type_counts{};
  std::map<size_t, int64_t> sequence_length_histogram;
  double mean_sequence_length = 0.0;
  std::vector<int64_t> popularity_counts;  // interaction counts, descending
  double fitted_power_exponent = 0.0;      // log-log slope over the head
  std::vector<std::pair<size_t, std::string>> malformed;  // line no, error
};

CorpusStats corpus_stats(const std::vector<Event>& events);
CorpusStats corpus_stats_from_file(const std::string& events_path);

}  // namespace rankstack::synth
