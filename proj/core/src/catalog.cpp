#include "rankstack/catalog.hpp"

#include <algorithm>

namespace rankstack {

CatalogIndex::CatalogIndex(std::vector<Item> items) : items_(std::move(items)) {
  std::sort(items_.begin(), items_.end(),
            [](const Item& a, const Item& b) { return a.item_id < b.item_id; });
  dense_.reserve(items_.size());
  int32_t max_rank = 0;
  for (size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    dense_[it.item_id] = static_cast<int>(i) + 1;
    by_category_[it.category_id].push_back(it.item_id);
    max_brand_ = std::max(max_brand_, it.brand_id);
    max_category_ = std::max(max_category_, it.category_id);
    max_color_ = std::max(max_color_, it.color_id);
    max_material_ = std::max(max_material_, it.material_id);
    max_pattern_ = std::max(max_pattern_, it.pattern_id);
    max_rank = std::max(max_rank, it.popularity_rank);
    d_pre_ = std::max(d_pre_, it.visual_vector.size());
  }
  by_popularity_.assign(static_cast<size_t>(max_rank) + 1, 0);
  for (size_t i = 0; i < items_.size(); ++i)
    by_popularity_[static_cast<size_t>(items_[i].popularity_rank)] =
        static_cast<int>(i) + 1;
}

int CatalogIndex::dense_index(ItemId id) const {
  auto it = dense_.find(id);
  return it == dense_.end() ? 0 : it->second;
}

const Item* CatalogIndex::find(ItemId id) const {
  int d = dense_index(id);
  return d == 0 ? nullptr : &items_[static_cast<size_t>(d - 1)];
}

const std::vector<ItemId>* CatalogIndex::category_items(
    int32_t category_id) const {
  auto it = by_category_.find(category_id);
  return it == by_category_.end() ? nullptr : &it->second;
}

std::vector<int32_t> CatalogIndex::category_ids() const {
  std::vector<int32_t> out;
  out.reserve(by_category_.size());
  for (const auto& [cat, items] : by_category_) out.push_back(cat);
  std::sort(out.begin(), out.end());
  return out;
}

int CatalogIndex::dense_by_popularity(int32_t rank) const {
  if (rank < 0 || static_cast<size_t>(rank) >= by_popularity_.size()) return 0;
  return by_popularity_[static_cast<size_t>(rank)];
}

VocabSpec VocabSpec::from_catalog(const CatalogIndex& catalog,
                                  int num_countries, int num_devices,
                                  int num_queries) {
  VocabSpec v;
  v.num_items = catalog.num_items() + 1;
  v.num_brands = catalog.max_brand() + 1;
  v.num_categories = catalog.max_category() + 1;
  v.num_colors = catalog.max_color() + 1;
  v.num_materials = catalog.max_material() + 1;
  v.num_patterns = catalog.max_pattern() + 1;
  v.num_countries = std::max(num_countries, 1);
  v.num_devices = std::max(num_devices, 1);
  v.num_queries = std::max(num_queries, 1);
  v.d_pre = static_cast<int>(catalog.d_pre());
  return v;
}

}  // namespace rankstack
