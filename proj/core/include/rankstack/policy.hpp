#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rankstack/domain.hpp"
#include "rankstack/rng.hpp"

namespace rankstack::policy {

struct PolicyConfig {
  int first_unexplored_positions = 7;  // k: exploration starts here (1-based)
  double epsilon = 0.1;
  int max_brand_run = 3;
  int64_t purchase_window_seconds = 60LL * 24 * 3600;   // two months
  int64_t freshness_window_seconds = 14LL * 24 * 3600;  // "new item" horizon

  void validate() const;
};

// Organic results S (blended relevance) and fresh items N (content-based
// relevance). Pools are disjoint and relevances strictly positive.
struct CandidatePools {
  std::vector<ScoredItem> organic;
  std::vector<ScoredItem> fresh;

  void validate() const;
};

// Epsilon-greedy blend: positions below k exploit S by relevance; from k on,
// each position explores N with probability epsilon (weighted by relevance,
// renormalized as N shrinks) and exploits S otherwise. An exhausted pool
// falls through to the other. The output is a permutation of S union N.
RankedList mix_new_items(const CandidatePools& pools, const PolicyConfig& cfg,
                         Rng& rng);

// Items purchased within the window move to the tail, order preserved on
// both sides.
RankedList downrank_purchased(const RankedList& list,
                              std::span<const Action> purchase_history,
                              const PolicyConfig& cfg, Timestamp now);

// Breaks same-brand runs longer than max_brand_run by relocating the first
// later differing-brand item to the offending position, scanning forward.
RankedList brand_diversity_pass(
    const RankedList& list,
    const std::function<int32_t(ItemId)>& brand_of, int max_brand_run);

}  // namespace rankstack::policy
