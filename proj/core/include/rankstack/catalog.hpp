#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankstack/domain.hpp"

namespace rankstack {

// Immutable catalog snapshot with dense indexing. Dense index 0 is reserved
// for unknown items; real items occupy 1..size().
class CatalogIndex {
public:
  CatalogIndex() = default;
  explicit CatalogIndex(std::vector<Item> items);

  int num_items() const { return static_cast<int>(items_.size()); }
  // 1-based dense index, 0 when the id is not in the snapshot
  int dense_index(ItemId id) const;
  const Item* find(ItemId id) const;
  const Item& by_dense(int dense) const { return items_[static_cast<size_t>(dense - 1)]; }
  const std::vector<Item>& items() const { return items_; }

  // items of one category, as item ids (catalog order)
  const std::vector<ItemId>* category_items(int32_t category_id) const;
  std::vector<int32_t> category_ids() const;

  // dense index of the item holding a given popularity rank, 0 if absent
  int dense_by_popularity(int32_t rank) const;

  int32_t max_brand() const { return max_brand_; }
  int32_t max_category() const { return max_category_; }
  int32_t max_color() const { return max_color_; }
  int32_t max_material() const { return max_material_; }
  int32_t max_pattern() const { return max_pattern_; }
  size_t d_pre() const { return d_pre_; }

private:
  std::vector<Item> items_;  // sorted by item_id
  std::unordered_map<ItemId, int> dense_;
  std::unordered_map<int32_t, std::vector<ItemId>> by_category_;
  std::vector<int> by_popularity_;
  int32_t max_brand_ = 0, max_category_ = 0, max_color_ = 0, max_material_ = 0,
          max_pattern_ = 0;
  size_t d_pre_ = 0;
};

// Frozen item-id -> embedding-row mapping, fixed when a model is initialized.
// Later catalog snapshots may add or remove items without disturbing the rows
// of items the model was trained on. Row 0 is the unknown item.
struct ItemVocab {
  std::unordered_map<ItemId, int> rows;
  int count = 1;  // rows incl. reserved 0

  int lookup(ItemId id) const {
    auto it = rows.find(id);
    return it == rows.end() ? 0 : it->second;
  }
  static ItemVocab from_catalog(const CatalogIndex& catalog) {
    ItemVocab v;
    for (const auto& item : catalog.items())
      v.rows[item.item_id] = static_cast<int>(v.rows.size()) + 1;
    v.count = static_cast<int>(v.rows.size()) + 1;
    return v;
  }
};

// Embedding-table sizes shared by a model and its data. Code 0 is the
// reserved "unknown" row of every vocabulary.
struct VocabSpec {
  int num_items = 1;  // dense indices incl. reserved 0
  int num_brands = 1;
  int num_categories = 1;
  int num_colors = 1;
  int num_materials = 1;
  int num_patterns = 1;
  int num_countries = 8;
  int num_devices = 8;
  int num_queries = 1;
  int d_pre = 0;

  static VocabSpec from_catalog(const CatalogIndex& catalog, int num_countries,
                                int num_devices, int num_queries);
};

inline int safe_code(int32_t code, int vocab) {
  return (code > 0 && code < vocab) ? static_cast<int>(code) : 0;
}

}  // namespace rankstack
