#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "doctest.h"
#include "rankstack/metrics.hpp"
#include "rankstack/rng.hpp"

using namespace rankstack;
using namespace rankstack::eval;

namespace {

// independent brute-force references, written from the definitions
double recall_reference(const std::vector<ItemId>& ranked,
                        const std::vector<ItemId>& relevant, int k) {
  int hits = 0;
  for (ItemId r : relevant) {
    for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i)
      if (ranked[static_cast<size_t>(i)] == r) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_reference(const std::vector<ItemId>& ranked,
                      const std::vector<ItemId>& relevant, int k) {
  double dcg = 0;
  for (int p = 1; p <= k && p <= static_cast<int>(ranked.size()); ++p) {
    bool rel = std::find(relevant.begin(), relevant.end(),
                         ranked[static_cast<size_t>(p - 1)]) != relevant.end();
    if (rel) dcg += 1.0 / std::log2(p + 1.0);
  }
  double idcg = 0;
  int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  for (int p = 1; p <= ideal; ++p) idcg += 1.0 / std::log2(p + 1.0);
  return idcg == 0 ? 0.0 : dcg / idcg;
}

int max_run_reference(const std::vector<int32_t>& brands) {
  int best = 0;
  for (size_t i = 0; i < brands.size(); ++i) {
    int run = 1;
    for (size_t j = i + 1; j < brands.size() && brands[j] == brands[i]; ++j)
      ++run;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace

TEST_CASE("recall hand values") {
  std::vector<ItemId> ranked = {1, 2, 3, 4, 5};
  CHECK(*recall_at_k(ranked, {1, 9}, 5) == doctest::Approx(0.5));
  CHECK(*recall_at_k(ranked, {1, 2, 3}, 5) == doctest::Approx(1.0));
  std::vector<ItemId> top2 = {30, 99};
  CHECK(*recall_at_k(top2, {10, 20, 30}, 2) == doctest::Approx(1.0 / 3));
  CHECK(!recall_at_k(ranked, {}, 3).has_value());  // excluded
}

TEST_CASE("ndcg hand values") {
  std::vector<ItemId> first = {7, 8};
  CHECK(*ndcg_at_k(first, {7}, 2) == doctest::Approx(1.0));
  std::vector<ItemId> second = {8, 7};
  CHECK(*ndcg_at_k(second, {7}, 2) ==
        doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  // relevant at positions 1 and 3 of k=3 with two relevant items
  std::vector<ItemId> mixed = {1, 99, 2};
  double want = (1.0 + 1.0 / 2.0) / (1.0 + 1.0 / std::log2(3.0));
  CHECK(*ndcg_at_k(mixed, {1, 2}, 3) == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.9197).epsilon(1e-4));
}

TEST_CASE("metrics match brute-force references on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    int catalog = 1 + static_cast<int>(rng.uniform_index(20));
    int k = 1 + static_cast<int>(rng.uniform_index(10));
    std::vector<ItemId> pool(static_cast<size_t>(catalog));
    for (int i = 0; i < catalog; ++i) pool[static_cast<size_t>(i)] = i + 1;
    // ranked = random permutation prefix
    std::vector<ItemId> ranked = pool;
    for (size_t i = ranked.size(); i > 1; --i)
      std::swap(ranked[i - 1], ranked[rng.uniform_index(i)]);
    size_t keep = 1 + rng.uniform_index(ranked.size());
    ranked.resize(keep);
    std::vector<ItemId> relevant;
    for (ItemId id : pool)
      if (rng.bernoulli(0.3)) relevant.push_back(id);
    if (relevant.empty()) relevant.push_back(pool[0]);
    std::unordered_set<ItemId> relevant_set(relevant.begin(), relevant.end());

    double r_ref = recall_reference(ranked, relevant, k);
    double n_ref = ndcg_reference(ranked, relevant, k);
    CHECK(std::abs(*recall_at_k(ranked, relevant_set, k) - r_ref) < 1e-12);
    CHECK(std::abs(*ndcg_at_k(ranked, relevant_set, k) - n_ref) < 1e-12);

    std::vector<int32_t> brands(ranked.size());
    std::unordered_map<ItemId, int32_t> brand_of_map;
    for (size_t i = 0; i < ranked.size(); ++i) {
      brands[i] = 1 + static_cast<int32_t>(rng.uniform_index(4));
      brand_of_map[ranked[i]] = brands[i];
    }
    auto brand_of = [&](ItemId id) { return brand_of_map.at(id); };
    CHECK(diversity_max_run(ranked, brand_of) == max_run_reference(brands));
  }
}

TEST_CASE("ndcg is 1 iff relevant items fill the top and ignores deep swaps") {
  std::vector<ItemId> perfect = {1, 2, 9, 8, 7};
  CHECK(*ndcg_at_k(perfect, {1, 2}, 5) == doctest::Approx(1.0));
  std::vector<ItemId> imperfect = {1, 9, 2, 8, 7};
  CHECK(*ndcg_at_k(imperfect, {1, 2}, 5) < 1.0);

  // permuting strictly below position k never changes either metric
  std::vector<ItemId> base = {1, 2, 3, 4, 5, 6};
  std::vector<ItemId> deep = {1, 2, 3, 6, 5, 4};
  CHECK(*ndcg_at_k(base, {2, 5}, 3) == *ndcg_at_k(deep, {2, 5}, 3));
  CHECK(*recall_at_k(base, {2, 5}, 3) == *recall_at_k(deep, {2, 5}, 3));
}

TEST_CASE("diversity boundary cases") {
  auto one_brand = [](ItemId) -> int32_t { return 1; };
  std::vector<ItemId> empty;
  CHECK(diversity_max_run(empty, one_brand) == 0);
  std::vector<ItemId> single = {5};
  CHECK(diversity_max_run(single, one_brand) == 1);
  std::unordered_map<ItemId, int32_t> brands = {{1, 1}, {2, 1}, {3, 2}, {4, 1}};
  std::vector<ItemId> aaba = {1, 2, 3, 4};
  CHECK(diversity_max_run(aaba, [&](ItemId id) { return brands.at(id); }) == 2);
  std::unordered_map<ItemId, int32_t> distinct = {{1, 1}, {2, 2}, {3, 3}};
  std::vector<ItemId> run1 = {1, 2, 3};
  CHECK(diversity_max_run(run1, [&](ItemId id) { return distinct.at(id); }) == 1);
}

TEST_CASE("novelty recall restricts to new relevant items") {
  std::vector<ItemId> ranked = {1, 2, 3};
  auto is_new = [](ItemId id) { return id == 2; };
  CHECK(*novelty_recall(ranked, {1, 2}, is_new, 3) == doctest::Approx(1.0));
  auto nothing_new = [](ItemId) { return false; };
  CHECK(!novelty_recall(ranked, {1, 2}, nothing_new, 3).has_value());
  auto all_new = [](ItemId) { return true; };
  CHECK(*novelty_recall(ranked, {1, 9}, all_new, 3) ==
        *recall_at_k(ranked, {1, 9}, 3));
}

TEST_CASE("paired t-test") {
  SUBCASE("identical samples give t=0, p=1") {
    std::vector<double> a = {1, 2, 3}, b = {1, 2, 3};
    auto r = paired_t_test(a, b);
    CHECK(r.t == 0.0);
    CHECK(r.p == 1.0);
  }
  SUBCASE("constant positive difference gives p -> 0") {
    std::vector<double> a = {2, 3, 4, 5}, b = {1, 2, 3, 4};
    auto r = paired_t_test(a, b);
    CHECK(r.p == 0.0);
    CHECK(std::isinf(r.t));
  }
  SUBCASE("five-pair dataset matches the textbook computation") {
    std::vector<double> a = {2, 3, 1, 0, 4}, b = {1, 1, 1, 1, 1};
    auto r = paired_t_test(a, b);
    CHECK(r.t == doctest::Approx(1.414213562373095).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(0.23019964108049873).epsilon(1e-9));
  }
  SUBCASE("length mismatch and tiny samples are rejected") {
    std::vector<double> a = {1, 2}, b = {1};
    CHECK_THROWS_AS(paired_t_test(a, b), std::invalid_argument);
    std::vector<double> single = {1};
    CHECK_THROWS_AS(paired_t_test(single, single), std::invalid_argument);
  }
}

TEST_CASE("temporal split partitions by time") {
  std::vector<Event> events;
  std::vector<RequestRecord> requests;
  for (int i = 0; i < 100; ++i) {
    events.push_back({i % 10, {i, ActionType::kClick, 100 + i}});
    RequestRecord r;
    r.customer_id = i % 10;
    r.timestamp = 100 + i;
    requests.push_back(r);
  }
  auto split = temporal_split(events, requests, 150);
  CHECK(split.train_events.size() == 50);
  CHECK(split.test_requests.size() == 50);
  for (const auto& ev : split.train_events)
    CHECK(ev.action.timestamp < 150);
  for (const auto& req : split.test_requests) CHECK(req.timestamp >= 150);
  Timestamp max_train = 0;
  for (const auto& ev : split.train_events)
    max_train = std::max(max_train, ev.action.timestamp);
  Timestamp min_test = std::numeric_limits<Timestamp>::max();
  for (const auto& req : split.test_requests)
    min_test = std::min(min_test, req.timestamp);
  CHECK(max_train < min_test);

  auto all_before = temporal_split(events, requests, 10'000);
  CHECK(all_before.test_requests.empty());  // boundary, not an error
}

TEST_CASE("eval requests never see post-request actions") {
  std::vector<Event> events = {
      {1, {10, ActionType::kClick, 100}},
      {1, {11, ActionType::kClick, 250}},  // after the request
  };
  RequestRecord req;
  req.customer_id = 1;
  req.timestamp = 200;
  PageImpression imp;
  imp.item_id = 12;
  imp.labels[0] = 1;
  req.page = {imp};
  auto reqs = build_eval_requests(events, {req});
  REQUIRE(reqs.size() == 1);
  CHECK(reqs[0].history.actions.size() == 1);
  CHECK(reqs[0].history.actions[0].item_id == 10);
  REQUIRE(reqs[0].relevant.size() == 1);
  CHECK(reqs[0].relevant[0] == 12);

  // injecting a future action changes nothing about the snapshot
  auto events2 = events;
  events2.push_back({1, {99, ActionType::kPurchase, 9999}});
  auto reqs2 = build_eval_requests(events2, {req});
  CHECK(reqs2[0].history.actions.size() == reqs[0].history.actions.size());
}

TEST_CASE("run_protocol aggregates deterministically and excludes empties") {
  // two customers, fixed scopes; system A returns scope order, system B reversed
  std::vector<EvalRequest> requests(3);
  requests[0].relevant = {1, 2};
  requests[0].timestamp = 1000;
  requests[1].relevant = {3};
  requests[1].hva_relevant = {3};
  requests[1].timestamp = 1000;
  requests[2].timestamp = 1000;  // no relevant items -> excluded

  auto scope_of = [](const EvalRequest&) {
    return std::vector<ItemId>{1, 2, 3, 4};
  };
  auto brand_of = [](ItemId id) { return static_cast<int32_t>(id % 2); };
  auto activation = [](ItemId) { return Timestamp{0}; };

  std::map<std::string, System> systems;
  systems["identity"] = [](const EvalRequest&, std::span<const ItemId> scope) {
    return std::vector<ItemId>(scope.begin(), scope.end());
  };
  systems["reversed"] = [](const EvalRequest&, std::span<const ItemId> scope) {
    std::vector<ItemId> out(scope.begin(), scope.end());
    std::reverse(out.begin(), out.end());
    return out;
  };
  ProtocolConfig cfg;
  cfg.ks = {2, 4};
  cfg.num_threads = 2;
  auto reports = run_protocol(systems, requests, scope_of, brand_of, activation,
                              cfg);
  REQUIRE(reports.size() == 2);
  const auto& ident = reports.at("identity");
  CHECK(ident.requests_evaluated == 2);
  CHECK(ident.requests_excluded == 1);
  // identity: req0 recall@2 = 1.0, req1 recall@2 (3 at pos 3) = 0
  CHECK(ident.recall.at(2) == doctest::Approx(0.5));
  CHECK(ident.recall.at(4) == doctest::Approx(1.0));
  const auto& rev = reports.at("reversed");
  // reversed scope = 4,3,2,1: req0 recall@2 = 0, req1 recall@2 = 1
  CHECK(rev.recall.at(2) == doctest::Approx(0.5));
  // item 3 sits at position 2 of the reversed scope
  CHECK(rev.hva_ndcg.at(2) ==
        doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-9));

  auto reports2 = run_protocol(systems, requests, scope_of, brand_of,
                               activation, cfg);
  CHECK(reports2.at("identity").recall.at(2) == ident.recall.at(2));
  CHECK(reports2.at("identity").per_request_ndcg ==
        ident.per_request_ndcg);
}

TEST_CASE("popularity table ranks by trailing-window counts") {
  std::vector<Event> events;
  for (int i = 0; i < 5; ++i) events.push_back({1, {7, ActionType::kClick, 100}});
  for (int i = 0; i < 3; ++i) events.push_back({1, {8, ActionType::kClick, 100}});
  events.push_back({1, {9, ActionType::kClick, 5}});  // outside window
  PopularityTable table(events, 200, 150);
  CHECK(table.count(7) == 5);
  CHECK(table.count(9) == 0);
  std::vector<ItemId> scope = {9, 8, 7};
  auto ranked = table.rank_scope(scope);
  std::vector<ItemId> want = {7, 8, 9};
  CHECK(ranked == want);
}
