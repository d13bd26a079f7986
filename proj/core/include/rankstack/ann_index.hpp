#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankstack/embedding_set.hpp"

namespace rankstack::ann {

enum class IndexMode { kExact, kApproximate };

struct HnswParams {
  int M = 16;
  int ef_construction = 200;
  int ef_search = 64;
};

struct Hit {
  ItemId item_id;
  double score;  // dot product, larger is better
};

// Immutable versioned item-embedding index over dot-product similarity.
// Vectors are stored in 32-bit serving precision; scores accumulate in
// doubles. Approximate mode is a hierarchical proximity graph; category
// filtering post-filters with query-time beam widening, falling back to a
// subset scan when the category is small relative to k.
class EmbeddingIndexVersion {
public:
  static std::shared_ptr<const EmbeddingIndexVersion> build(
      const EmbeddingSet& set, IndexMode mode, HnswParams params,
      const std::unordered_map<ItemId, int32_t>& item_categories,
      uint64_t seed = 42);

  const std::string& model_version() const { return model_version_; }
  int d_emb() const { return d_emb_; }
  size_t size() const { return live_count_; }
  IndexMode mode() const { return mode_; }
  const HnswParams& params() const { return params_; }

  // descending by score; ties broken by item_id. Unknown category -> empty.
  std::vector<Hit> query_topk(std::span<const double> query, int k,
                              std::optional<int32_t> category = {}) const;

  // Returns a new index with the row added or replaced. The embedding must
  // come from the same tower-model version and match d_emb.
  std::shared_ptr<const EmbeddingIndexVersion> upsert(
      ItemId id, std::span<const double> embedding, int32_t category,
      const std::string& source_model_version) const;

  // "RKG1": adjacency lists with little-endian u32 node ids. Approximate
  // mode only; vectors themselves live in the paired "RKE1" file.
  void save_graph(const std::string& path) const;
  static std::shared_ptr<const EmbeddingIndexVersion> load_graph(
      const std::string& path, const EmbeddingSet& set);

private:
  EmbeddingIndexVersion() = default;

  const float* vec(uint32_t node) const {
    return vectors_.data() + static_cast<size_t>(node) * d_emb_;
  }
  double score_against(std::span<const double> query, uint32_t node) const;
  int random_level(uint64_t key) const;
  void insert_node(uint32_t node);
  std::vector<std::pair<double, uint32_t>> search_layer(
      std::span<const double> query, uint32_t entry, int ef, int layer) const;
  std::vector<Hit> exact_scan(std::span<const double> query, int k,
                              const std::vector<uint32_t>* subset) const;
  std::vector<Hit> graph_search(std::span<const double> query, int k,
                                std::optional<int32_t> category) const;
  void build_graph(uint64_t seed);

  std::string model_version_;
  int d_emb_ = 0;
  IndexMode mode_ = IndexMode::kExact;
  HnswParams params_;
  uint64_t seed_ = 42;

  std::vector<float> vectors_;  // node-major rows
  std::vector<ItemId> ids_;     // per node
  std::vector<int32_t> categories_;
  std::vector<uint8_t> dead_;  // tombstoned nodes (replaced by upsert)
  std::unordered_map<ItemId, uint32_t> node_of_;
  std::unordered_map<int32_t, std::vector<uint32_t>> by_category_;
  size_t live_count_ = 0;

  // graph: per node, per level, neighbor lists
  std::vector<std::vector<std::vector<uint32_t>>> links_;
  std::vector<int> levels_;
  uint32_t entry_point_ = 0;
  int max_level_ = -1;
};

// Blue-green pair: queries are served by the active version only; swapping
// is atomic from the queriers' view.
class IndexPair {
public:
  std::shared_ptr<const EmbeddingIndexVersion> active() const;
  std::shared_ptr<const EmbeddingIndexVersion> staging() const;

  void stage(std::shared_ptr<const EmbeddingIndexVersion> next);
  // staging becomes active; throws without staging or when versions collide
  void swap();

  // upsert routed to staging when present, otherwise to the active version
  // (same model version required either way)
  void upsert(ItemId id, std::span<const double> embedding, int32_t category,
              const std::string& source_model_version);

private:
  mutable std::mutex mu_;
  std::shared_ptr<const EmbeddingIndexVersion> active_;
  std::shared_ptr<const EmbeddingIndexVersion> staging_;
};

}  // namespace rankstack::ann
