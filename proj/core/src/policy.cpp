#include "rankstack/policy.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace rankstack::policy {

void PolicyConfig::validate() const {
  if (epsilon < 0.0 || epsilon > 1.0)
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  if (first_unexplored_positions < 1)
    throw std::invalid_argument("k must be at least 1");
  if (max_brand_run < 1)
    throw std::invalid_argument("max_brand_run must be at least 1");
}

void CandidatePools::validate() const {
  std::unordered_set<ItemId> organic_ids;
  for (const auto& s : organic) {
    if (s.blended_score <= 0.0)
      throw std::invalid_argument("organic relevance must be positive");
    organic_ids.insert(s.item_id);
  }
  std::unordered_set<ItemId> fresh_ids;
  for (const auto& s : fresh) {
    if (s.blended_score <= 0.0)
      throw std::invalid_argument("fresh relevance must be positive");
    if (organic_ids.count(s.item_id))
      throw std::invalid_argument("pools must be disjoint");
    if (!fresh_ids.insert(s.item_id).second)
      throw std::invalid_argument("duplicate fresh item");
  }
}

namespace {

// descending relevance, item id as the deterministic tie break
void sort_pool(std::vector<ScoredItem>& pool) {
  std::sort(pool.begin(), pool.end(),
            [](const ScoredItem& a, const ScoredItem& b) {
              if (a.blended_score != b.blended_score)
                return a.blended_score > b.blended_score;
              return a.item_id < b.item_id;
            });
}

ScoredItem pop_best(std::vector<ScoredItem>& sorted_pool) {
  ScoredItem out = sorted_pool.front();
  sorted_pool.erase(sorted_pool.begin());
  return out;
}

ScoredItem pop_weighted(std::vector<ScoredItem>& pool, Rng& rng) {
  double total = 0;
  for (const auto& s : pool) total += s.blended_score;
  double u = rng.uniform() * total;
  size_t pick = pool.size() - 1;
  for (size_t i = 0; i < pool.size(); ++i) {
    u -= pool[i].blended_score;
    if (u <= 0) {
      pick = i;
      break;
    }
  }
  ScoredItem out = pool[pick];
  pool.erase(pool.begin() + static_cast<ptrdiff_t>(pick));
  return out;
}

}  // namespace

RankedList mix_new_items(const CandidatePools& pools, const PolicyConfig& cfg,
                         Rng& rng) {
  cfg.validate();
  pools.validate();
  std::vector<ScoredItem> organic = pools.organic;
  std::vector<ScoredItem> fresh = pools.fresh;
  sort_pool(organic);
  sort_pool(fresh);

  RankedList out;
  out.items.reserve(organic.size() + fresh.size());
  size_t total = organic.size() + fresh.size();

  for (size_t pos = 1; pos <= total; ++pos) {
    bool explore = false;
    if (pos >= static_cast<size_t>(cfg.first_unexplored_positions))
      explore = rng.bernoulli(cfg.epsilon);
    if (explore && !fresh.empty()) {
      out.items.push_back(pop_weighted(fresh, rng));
    } else if (!organic.empty()) {
      out.items.push_back(pop_best(organic));
    } else if (!fresh.empty()) {
      // exploitation fallthrough once S is exhausted: best remaining by
      // relevance, no randomness
      out.items.push_back(pop_best(fresh));
    }
  }
  return out;
}

RankedList downrank_purchased(const RankedList& list,
                              std::span<const Action> purchase_history,
                              const PolicyConfig& cfg, Timestamp now) {
  std::unordered_set<ItemId> recent;
  for (const auto& a : purchase_history) {
    if (a.action_type != ActionType::kPurchase) continue;
    if (now - a.timestamp <= cfg.purchase_window_seconds &&
        a.timestamp <= now)
      recent.insert(a.item_id);
  }
  RankedList out;
  out.items.reserve(list.items.size());
  std::vector<ScoredItem> tail;
  for (const auto& s : list.items) {
    if (recent.count(s.item_id))
      tail.push_back(s);
    else
      out.items.push_back(s);
  }
  out.items.insert(out.items.end(), tail.begin(), tail.end());
  return out;
}

RankedList brand_diversity_pass(
    const RankedList& list,
    const std::function<int32_t(ItemId)>& brand_of, int max_brand_run) {
  if (max_brand_run < 1)
    throw std::invalid_argument("max_brand_run must be at least 1");
  RankedList out = list;
  auto& items = out.items;
  size_t n = items.size();
  size_t i = 0;
  while (i < n) {
    int32_t brand = brand_of(items[i].item_id);
    size_t j = i + 1;
    while (j < n && brand_of(items[j].item_id) == brand) ++j;
    size_t run_len = j - i;
    if (run_len > static_cast<size_t>(max_brand_run) && j < n) {
      // items[j] is the first differing-brand item after the run
      size_t cut = i + static_cast<size_t>(max_brand_run);
      ScoredItem moved = items[j];
      items.erase(items.begin() + static_cast<ptrdiff_t>(j));
      items.insert(items.begin() + static_cast<ptrdiff_t>(cut), moved);
      i = cut + 1;
    } else {
      i = j;
    }
  }
  return out;
}

}  // namespace rankstack::policy
