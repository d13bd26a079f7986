#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "rankstack/domain.hpp"

namespace rankstack::eval {

// --- temporal split -----------------------------------------------------------

struct TemporalSplit {
  std::vector<Event> train_events;
  std::vector<RequestRecord> train_requests;
  std::vector<RequestRecord> test_requests;
};

// train actions strictly before split_time; test requests at or after it
TemporalSplit temporal_split(const std::vector<Event>& events,
                             const std::vector<RequestRecord>& requests,
                             Timestamp split_time);

// --- pointwise metrics ----------------------------------------------------------

// |top-k intersect relevant| / |relevant|; empty relevant set -> excluded
std::optional<double> recall_at_k(std::span<const ItemId> ranked,
                                  const std::unordered_set<ItemId>& relevant,
                                  int k);

// binary gains, DCG discount 1/log2(pos+1); IDCG = 0 -> excluded
std::optional<double> ndcg_at_k(std::span<const ItemId> ranked,
                                const std::unordered_set<ItemId>& relevant,
                                int k);

// longest run of consecutive same-brand items; 0 for an empty ranking
int diversity_max_run(std::span<const ItemId> ranked,
                      const std::function<int32_t(ItemId)>& brand_of);

// recall over relevant-and-new items only; none -> excluded
std::optional<double> novelty_recall(
    std::span<const ItemId> ranked, const std::unordered_set<ItemId>& relevant,
    const std::function<bool(ItemId)>& is_new, int k);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
};

// paired t-test over per-request metric samples
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// --- evaluation protocol ---------------------------------------------------------

// A logged request with the model-visible snapshot frozen at request time.
struct EvalRequest {
  CustomerId customer_id = 0;
  Timestamp timestamp = 0;
  CustomerSequence history;  // actions strictly before the request
  GlobalContext global;
  LocalContext local;
  std::vector<ItemId> relevant;      // any positive action
  std::vector<ItemId> hva_relevant;  // add-to-wishlist / add-to-cart only
};

// builds snapshots enforcing the no-leakage contract
std::vector<EvalRequest> build_eval_requests(
    const std::vector<Event>& events,
    const std::vector<RequestRecord>& requests);

// A system turns (request, scoped catalog) into a ranking of item ids.
using System =
    std::function<std::vector<ItemId>(const EvalRequest&, std::span<const ItemId>)>;

// request -> scoped catalog (category items for browse, match set for search)
using ScopeProvider = std::function<std::vector<ItemId>(const EvalRequest&)>;

struct SystemReport {
  std::string system;
  std::map<int, double> recall;      // k -> mean
  std::map<int, double> ndcg;        // k -> mean
  std::map<int, double> hva_ndcg;    // k -> mean over HVA-relevant requests
  double mean_diversity_run = 0.0;
  double novelty = 0.0;
  size_t requests_evaluated = 0;
  size_t requests_excluded = 0;
  // per-request samples at ks.front(), aligned across systems for t-tests
  std::vector<double> per_request_ndcg;
  std::vector<double> per_request_recall;
};

struct ProtocolConfig {
  std::vector<int> ks = {6, 84, 500};
  int depth = 500;  // candidates forwarded from retrieval to ranking
  int num_threads = 0;
  int64_t freshness_window_seconds = 14LL * 24 * 3600;
};

// Runs every system on every request over its scoped catalog and aggregates.
// Deterministic: requests are processed into fixed slots and reduced in
// request order regardless of thread count.
std::map<std::string, SystemReport> run_protocol(
    const std::map<std::string, System>& systems,
    const std::vector<EvalRequest>& requests, const ScopeProvider& scope_of,
    const std::function<int32_t(ItemId)>& brand_of,
    const std::function<Timestamp(ItemId)>& activation_time_of,
    const ProtocolConfig& cfg);

// trailing-window interaction counts for the popularity baseline
class PopularityTable {
public:
  PopularityTable(const std::vector<Event>& train_events,
                  Timestamp window_end, int64_t window_seconds);
  int64_t count(ItemId id) const;
  // scope sorted by count descending, item id ascending
  std::vector<ItemId> rank_scope(std::span<const ItemId> scope) const;

private:
  std::unordered_map<ItemId, int64_t> counts_;
};

std::string report_table(const std::map<std::string, SystemReport>& reports,
                         const std::vector<int>& ks);
std::string report_jsonl(const std::map<std::string, SystemReport>& reports);

}  // namespace rankstack::eval
