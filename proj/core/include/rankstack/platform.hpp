#pragma once

#include <array>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rankstack/ann_index.hpp"
#include "rankstack/catalog.hpp"
#include "rankstack/domain.hpp"
#include "rankstack/metrics.hpp"
#include "rankstack/policy.hpp"
#include "rankstack/ranker.hpp"
#include "rankstack/retrieval.hpp"
#include "rankstack/synth.hpp"

namespace rankstack::platform {

struct PlatformConfig {
  HeadWeights head_weights;
  policy::PolicyConfig policy;
  ann::IndexMode index_mode = ann::IndexMode::kApproximate;
  ann::HnswParams index_params;
  int page_size = 84;
  int retrieval_depth = 500;
  double serve_position = 0.0;
  uint64_t policy_seed = 1;

  std::string catalog_path;
  std::string retrieval_checkpoint;
  std::string retrieval_meta;
  std::string ranker_checkpoint;
  std::string ranker_meta;
  std::string embeddings_path;

  void validate() const;
  // documented key = value text format, '#' comments
  static PlatformConfig from_file(const std::string& path);
  void save(const std::string& path) const;
};

// Per-customer ring buffer of recent actions, capacity 100, kept in
// timestamp order. Sharded for concurrent ingestion; reads snapshot under
// the shard lock, giving per-customer read-your-writes.
class SequenceCache {
public:
  void ingest(CustomerId customer, const Action& action);
  CustomerSequence snapshot(CustomerId customer) const;
  void warm(const std::vector<Event>& events);
  size_t customers() const;
  void snapshot_to_disk(const std::string& events_path) const;

private:
  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<CustomerId, std::vector<Action>> sequences;
  };
  Shard& shard_for(CustomerId customer) const {
    return shards_[static_cast<size_t>(Rng::splitmix(
                       static_cast<uint64_t>(customer))) %
                   shards_.size()];
  }
  mutable std::array<Shard, 16> shards_;
};

struct RankRequest {
  CustomerId customer_id = 0;
  GlobalContext global;
  bool is_search = false;
  std::optional<int32_t> category_id;
  std::optional<int32_t> query_id;
  int page_index = 0;
  std::optional<int> page_size;
  std::optional<Timestamp> now;  // injectable for reproducible tests
};

enum class RankStatus { kOk, kUnknownCategory, kServiceUnavailable };

struct RankResponse {
  RankStatus status = RankStatus::kServiceUnavailable;
  std::vector<ScoredItem> items;
  std::string model_version;
  Timestamp served_at = 0;
  std::string detail;
};

// One fully-loaded model generation: tower + ranker + index + catalog
// snapshot, all keyed to one version. Requests bind to exactly one
// deployment for their whole lifetime.
struct Deployment {
  std::string version;
  TwoTowerModel retrieval;
  RankerModel ranker;
  std::shared_ptr<const ann::EmbeddingIndexVersion> index;
  CatalogIndex catalog;
  RankerItemCache ranker_cache;
  nn::Tensor item_meta;  // metadata-only embeddings for fresh-item relevance

  Deployment(TwoTowerModel r, RankerModel rk,
             std::shared_ptr<const ann::EmbeddingIndexVersion> idx,
             CatalogIndex cat);
};

struct DeployReport {
  std::string previous_version;  // empty on first deployment
  std::string new_version;
};

class Engine {
public:
  explicit Engine(PlatformConfig cfg);

  const PlatformConfig& config() const { return cfg_; }
  SequenceCache& cache() { return cache_; }

  // throws std::invalid_argument on malformed actions
  void ingest_event(CustomerId customer, const Action& action);

  RankResponse handle_rank(const RankRequest& request) const;

  // builds a deployment from the configured artifact paths
  DeployReport deploy_from_paths();
  // in-memory variant; rejects version mismatches before any swap
  DeployReport deploy(TwoTowerModel retrieval, RankerModel ranker,
                      const EmbeddingSet& embeddings, CatalogIndex catalog);

  std::shared_ptr<const Deployment> active() const;

private:
  PlatformConfig cfg_;
  SequenceCache cache_;
  mutable std::mutex active_mu_;
  std::shared_ptr<const Deployment> active_;
  std::mutex deploy_mu_;  // single writer through the swap
};

// --- offline protocol glue ------------------------------------------------------

// scope = activated items of the request's category at request time
eval::ScopeProvider make_scope_provider(const CatalogIndex& catalog);

struct SystemBundle {
  std::map<std::string, eval::System> systems;
};

// "popularity", "retrieval", "full" (+ "oracle" when truth is given)
SystemBundle build_systems(const TwoTowerModel* retrieval,
                           const RankerModel* ranker,
                           const CatalogIndex& catalog,
                           const eval::PopularityTable* popularity,
                           const PlatformConfig& cfg,
                           const synth::GroundTruth* truth = nullptr,
                           int depth = 500);

}  // namespace rankstack::platform
