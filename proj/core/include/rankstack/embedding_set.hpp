#pragma once

#include <string>
#include <vector>

#include "rankstack/domain.hpp"

namespace rankstack {

// Versioned set of item embeddings produced by one tower-model version.
// On disk: "RKE1" magic, model_version string, u32 d_emb, u32 count, then
// per row (i64 item_id, d_emb little-endian f32).
struct EmbeddingSet {
  std::string model_version;
  int d_emb = 0;
  std::vector<ItemId> ids;
  std::vector<float> data;  // row-major, ids.size() x d_emb

  const float* row(size_t i) const {
    return data.data() + i * static_cast<size_t>(d_emb);
  }
  size_t count() const { return ids.size(); }

  void save(const std::string& path) const;
  static EmbeddingSet load(const std::string& path);
};

}  // namespace rankstack
