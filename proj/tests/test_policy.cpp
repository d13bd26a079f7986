#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "doctest.h"
#include "rankstack/policy.hpp"

using namespace rankstack;
using namespace rankstack::policy;

namespace {

ScoredItem scored(ItemId id, double rel) {
  ScoredItem s;
  s.item_id = id;
  s.blended_score = rel;
  return s;
}

std::vector<ItemId> ids_of(const RankedList& list) {
  std::vector<ItemId> out;
  for (const auto& s : list.items) out.push_back(s.item_id);
  return out;
}

CandidatePools demo_pools(int organic_n, int fresh_n) {
  CandidatePools pools;
  for (int i = 0; i < organic_n; ++i)
    pools.organic.push_back(scored(100 + i, organic_n - i + 0.5));
  for (int i = 0; i < fresh_n; ++i)
    pools.fresh.push_back(scored(900 + i, fresh_n - i + 0.25));
  return pools;
}

}  // namespace

TEST_CASE("epsilon zero reproduces pure exploitation order") {
  auto pools = demo_pools(5, 3);
  PolicyConfig cfg;
  cfg.epsilon = 0.0;
  cfg.first_unexplored_positions = 2;
  Rng rng_a(1), rng_b(999);
  auto a = mix_new_items(pools, cfg, rng_a);
  auto b = mix_new_items(pools, cfg, rng_b);
  auto got = ids_of(a);
  std::vector<ItemId> want = {100, 101, 102, 103, 104, 900, 901, 902};
  CHECK(got == want);
  CHECK(ids_of(b) == want);  // seed independent at epsilon 0
}

TEST_CASE("mix output is always a permutation of both pools") {
  PolicyConfig cfg;
  cfg.epsilon = 0.4;
  cfg.first_unexplored_positions = 3;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto pools = demo_pools(6, 4);
    Rng rng(seed);
    auto mixed = mix_new_items(pools, cfg, rng);
    REQUIRE(mixed.items.size() == 10);
    std::unordered_set<ItemId> seen;
    for (const auto& s : mixed.items) CHECK(seen.insert(s.item_id).second);
    for (const auto& s : pools.organic) CHECK(seen.count(s.item_id));
    for (const auto& s : pools.fresh) CHECK(seen.count(s.item_id));
  }
}

TEST_CASE("first k-1 positions hold the top organic items") {
  PolicyConfig cfg;
  cfg.epsilon = 1.0;  // maximal exploration pressure after k
  cfg.first_unexplored_positions = 4;
  auto pools = demo_pools(8, 3);
  Rng rng(7);
  auto mixed = mix_new_items(pools, cfg, rng);
  auto got = ids_of(mixed);
  CHECK(got[0] == 100);
  CHECK(got[1] == 101);
  CHECK(got[2] == 102);
}

TEST_CASE("epsilon one with empty organic samples by relevance weights") {
  // N = {x: rel 3, y: rel 1} -> P(x first) = 0.75
  PolicyConfig cfg;
  cfg.epsilon = 1.0;
  cfg.first_unexplored_positions = 1;
  int x_first = 0;
  const int runs = 40000;
  for (int i = 0; i < runs; ++i) {
    CandidatePools pools;
    pools.fresh = {scored(1, 3.0), scored(2, 1.0)};
    Rng rng(static_cast<uint64_t>(i) + 1);
    auto mixed = mix_new_items(pools, cfg, rng);
    REQUIRE(mixed.items.size() == 2);
    if (mixed.items[0].item_id == 1) ++x_first;
  }
  double p = static_cast<double>(x_first) / runs;
  CHECK(std::abs(p - 0.75) < 0.01);
}

TEST_CASE("empirical exploration rate approaches epsilon") {
  PolicyConfig cfg;
  cfg.first_unexplored_positions = 4;
  for (double eps : {0.1, 0.5}) {
    cfg.epsilon = eps;
    long fresh_draws = 0, eligible = 0;
    long first_draw_fresh = 0;
    const int runs = 10000;
    for (int run = 0; run < runs; ++run) {
      auto pools = demo_pools(20, 5);
      std::unordered_set<ItemId> fresh_ids;
      for (const auto& s : pools.fresh) fresh_ids.insert(s.item_id);
      Rng rng(static_cast<uint64_t>(run) * 31 + 7);
      auto mixed = mix_new_items(pools, cfg, rng);
      size_t organic_left = pools.organic.size(),
             fresh_left = pools.fresh.size();
      for (size_t pos = 1; pos <= mixed.items.size(); ++pos) {
        bool is_fresh = fresh_ids.count(mixed.items[pos - 1].item_id) > 0;
        if (pos >= static_cast<size_t>(cfg.first_unexplored_positions) &&
            organic_left > 0 && fresh_left > 0) {
          ++eligible;
          if (is_fresh) ++fresh_draws;
          if (pos == static_cast<size_t>(cfg.first_unexplored_positions) &&
              is_fresh)
            ++first_draw_fresh;
        }
        if (is_fresh)
          --fresh_left;
        else
          --organic_left;
      }
    }
    double rate = static_cast<double>(fresh_draws) / eligible;
    CHECK(std::abs(rate - eps) < 0.02);
    double first_rate = static_cast<double>(first_draw_fresh) / runs;
    CHECK(std::abs(first_rate - eps) < 0.02);
  }
}

TEST_CASE("pool validation rejects bad input") {
  PolicyConfig cfg;
  Rng rng(1);
  CandidatePools overlap;
  overlap.organic = {scored(1, 1.0)};
  overlap.fresh = {scored(1, 1.0)};
  CHECK_THROWS_AS(mix_new_items(overlap, cfg, rng), std::invalid_argument);

  CandidatePools nonpositive;
  nonpositive.organic = {scored(1, 0.0)};
  CHECK_THROWS_AS(mix_new_items(nonpositive, cfg, rng), std::invalid_argument);

  CandidatePools empty;
  CHECK(mix_new_items(empty, cfg, rng).items.empty());

  PolicyConfig bad;
  bad.epsilon = 1.5;
  CHECK_THROWS_AS(mix_new_items(empty, bad, rng), std::invalid_argument);
}

TEST_CASE("downrank_purchased moves recent purchases to the tail") {
  PolicyConfig cfg;  // 60-day window
  RankedList list;
  list.items = {scored(1, 5), scored(2, 4), scored(3, 3), scored(4, 2)};
  const Timestamp now = 100LL * 24 * 3600;

  SUBCASE("no purchases leaves the list unchanged") {
    auto out = downrank_purchased(list, {}, cfg, now);
    CHECK(ids_of(out) == ids_of(list));
  }
  SUBCASE("a day-old purchase at the top moves to the tail") {
    std::vector<Action> history = {
        {1, ActionType::kPurchase, now - 24 * 3600}};
    auto out = downrank_purchased(list, history, cfg, now);
    std::vector<ItemId> want = {2, 3, 4, 1};
    CHECK(ids_of(out) == want);
  }
  SUBCASE("a 70-day-old purchase is outside the window") {
    std::vector<Action> history = {
        {1, ActionType::kPurchase, now - 70LL * 24 * 3600}};
    auto out = downrank_purchased(list, history, cfg, now);
    CHECK(ids_of(out) == ids_of(list));
  }
  SUBCASE("non-purchase actions never demote") {
    std::vector<Action> history = {{1, ActionType::kAddToCart, now - 100}};
    auto out = downrank_purchased(list, history, cfg, now);
    CHECK(ids_of(out) == ids_of(list));
  }
  SUBCASE("relative order preserved on both sides") {
    std::vector<Action> history = {{1, ActionType::kPurchase, now - 10},
                                   {3, ActionType::kPurchase, now - 10}};
    auto out = downrank_purchased(list, history, cfg, now);
    std::vector<ItemId> want = {2, 4, 1, 3};
    CHECK(ids_of(out) == want);
  }
  SUBCASE("idempotent") {
    std::vector<Action> history = {{2, ActionType::kPurchase, now - 10}};
    auto once = downrank_purchased(list, history, cfg, now);
    auto twice = downrank_purchased(once, history, cfg, now);
    CHECK(ids_of(once) == ids_of(twice));
  }
}

TEST_CASE("brand diversity relocation") {
  std::unordered_map<ItemId, int32_t> brands;
  auto brand_of = [&brands](ItemId id) { return brands.at(id); };
  auto make = [&](const std::vector<int32_t>& bs) {
    RankedList list;
    brands.clear();
    for (size_t i = 0; i < bs.size(); ++i) {
      list.items.push_back(scored(static_cast<ItemId>(i + 1), 10.0 - i));
      brands[static_cast<ItemId>(i + 1)] = bs[i];
    }
    return list;
  };
  auto brands_of = [&](const RankedList& list) {
    std::vector<int32_t> out;
    for (const auto& s : list.items) out.push_back(brand_of(s.item_id));
    return out;
  };

  SUBCASE("A A A B with k=2 becomes A A B A") {
    auto out = brand_diversity_pass(make({1, 1, 1, 2}), brand_of, 2);
    std::vector<int32_t> want = {1, 1, 2, 1};
    CHECK(brands_of(out) == want);
  }
  SUBCASE("single brand stays untouched") {
    auto list = make({1, 1, 1, 1});
    auto out = brand_diversity_pass(list, brand_of, 2);
    CHECK(ids_of(out) == ids_of(list));
  }
  SUBCASE("alternating brands stay untouched") {
    auto list = make({1, 2, 1, 2});
    auto out = brand_diversity_pass(list, brand_of, 2);
    CHECK(ids_of(out) == ids_of(list));
  }
  SUBCASE("long runs are broken repeatedly while material exists") {
    auto out = brand_diversity_pass(make({1, 1, 1, 1, 1, 2, 3, 2}), brand_of, 2);
    auto bs = brands_of(out);
    // no prefix run longer than 2 until differing items ran out
    int run = 1;
    for (size_t i = 1; i < 6; ++i) {
      run = bs[i] == bs[i - 1] ? run + 1 : 1;
      CHECK(run <= 2);
    }
  }
  SUBCASE("idempotent and a permutation") {
    auto list = make({1, 1, 1, 2, 2, 2, 3, 1});
    auto once = brand_diversity_pass(list, brand_of, 2);
    auto twice = brand_diversity_pass(once, brand_of, 2);
    CHECK(ids_of(once) == ids_of(twice));
    auto sorted_in = ids_of(list), sorted_out = ids_of(once);
    std::sort(sorted_in.begin(), sorted_in.end());
    std::sort(sorted_out.begin(), sorted_out.end());
    CHECK(sorted_in == sorted_out);
  }
}
