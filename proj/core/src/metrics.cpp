#include "rankstack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "rankstack/parallel.hpp"

namespace rankstack::eval {

TemporalSplit temporal_split(const std::vector<Event>& events,
                             const std::vector<RequestRecord>& requests,
                             Timestamp split_time) {
  TemporalSplit out;
  for (const auto& ev : events)
    if (ev.action.timestamp < split_time) out.train_events.push_back(ev);
  for (const auto& req : requests) {
    if (req.timestamp < split_time)
      out.train_requests.push_back(req);
    else
      out.test_requests.push_back(req);
  }
  return out;
}

std::optional<double> recall_at_k(std::span<const ItemId> ranked,
                                  const std::unordered_set<ItemId>& relevant,
                                  int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be positive");
  if (relevant.empty()) return std::nullopt;
  size_t limit = std::min(ranked.size(), static_cast<size_t>(k));
  int hits = 0;
  for (size_t i = 0; i < limit; ++i)
    if (relevant.count(ranked[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

std::optional<double> ndcg_at_k(std::span<const ItemId> ranked,
                                const std::unordered_set<ItemId>& relevant,
                                int k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be positive");
  if (relevant.empty()) return std::nullopt;
  size_t limit = std::min(ranked.size(), static_cast<size_t>(k));
  double dcg = 0;
  for (size_t i = 0; i < limit; ++i) {
    if (relevant.count(ranked[i]))
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  size_t ideal = std::min(relevant.size(), static_cast<size_t>(k));
  double idcg = 0;
  for (size_t i = 0; i < ideal; ++i)
    idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  if (idcg == 0.0) return std::nullopt;
  return dcg / idcg;
}

int diversity_max_run(std::span<const ItemId> ranked,
                      const std::function<int32_t(ItemId)>& brand_of) {
  if (ranked.empty()) return 0;
  int best = 1, run = 1;
  int32_t prev = brand_of(ranked[0]);
  for (size_t i = 1; i < ranked.size(); ++i) {
    int32_t b = brand_of(ranked[i]);
    run = b == prev ? run + 1 : 1;
    best = std::max(best, run);
    prev = b;
  }
  return best;
}

std::optional<double> novelty_recall(
    std::span<const ItemId> ranked, const std::unordered_set<ItemId>& relevant,
    const std::function<bool(ItemId)>& is_new, int k) {
  std::unordered_set<ItemId> relevant_new;
  for (ItemId id : relevant)
    if (is_new(id)) relevant_new.insert(id);
  if (relevant_new.empty()) return std::nullopt;
  return recall_at_k(ranked, relevant_new, k);
}

namespace {

// regularized incomplete beta via continued fraction (Lentz)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2)
    throw std::invalid_argument("paired_t_test: need at least two pairs");
  size_t n = a.size();
  double mean = 0;
  for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0;
  for (size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);

  TTestResult out;
  if (var == 0.0) {
    if (mean == 0.0) return {0.0, 1.0};
    return {mean > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity(),
            0.0};
  }
  double se = std::sqrt(var / static_cast<double>(n));
  out.t = mean / se;
  double df = static_cast<double>(n - 1);
  out.p = betai(df / 2.0, 0.5, df / (df + out.t * out.t));
  return out;
}

std::vector<EvalRequest> build_eval_requests(
    const std::vector<Event>& events,
    const std::vector<RequestRecord>& requests) {
  auto sequences = group_events(events);
  std::unordered_map<CustomerId, const CustomerSequence*> by_customer;
  for (const auto& s : sequences) by_customer[s.customer_id] = &s;

  std::vector<EvalRequest> out;
  out.reserve(requests.size());
  for (const auto& req : requests) {
    EvalRequest er;
    er.customer_id = req.customer_id;
    er.timestamp = req.timestamp;
    er.global = req.global;
    er.local = req.local;
    er.history.customer_id = req.customer_id;
    auto it = by_customer.find(req.customer_id);
    if (it != by_customer.end()) {
      // only data up to the request timestamp is visible to any model
      for (const auto& a : it->second->actions)
        if (a.timestamp < req.timestamp) er.history.actions.push_back(a);
    }
    er.history = truncate_sequence(er.history, kMaxSequenceLength);
    for (const auto& imp : req.page) {
      if (imp.any_positive()) er.relevant.push_back(imp.item_id);
      if (imp.labels[static_cast<size_t>(ActionType::kAddToWishlist)] ||
          imp.labels[static_cast<size_t>(ActionType::kAddToCart)])
        er.hva_relevant.push_back(imp.item_id);
    }
    out.push_back(std::move(er));
  }
  return out;
}

std::map<std::string, SystemReport> run_protocol(
    const std::map<std::string, System>& systems,
    const std::vector<EvalRequest>& requests, const ScopeProvider& scope_of,
    const std::function<int32_t(ItemId)>& brand_of,
    const std::function<Timestamp(ItemId)>& activation_time_of,
    const ProtocolConfig& cfg) {
  struct PerRequest {
    bool excluded = true;
    std::map<int, double> recall, ndcg;
    std::map<int, std::optional<double>> hva_ndcg;
    int diversity = 0;
    std::optional<double> novelty;
  };

  std::map<std::string, SystemReport> reports;
  int threads = cfg.num_threads > 0 ? cfg.num_threads : default_thread_count();

  // fixed scopes per request, shared by every system
  std::vector<std::vector<ItemId>> scopes(requests.size());
  parallel_chunks(requests.size(), threads, [&](int, size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) scopes[i] = scope_of(requests[i]);
  });

  for (const auto& [name, system] : systems) {
    std::vector<PerRequest> rows(requests.size());
    parallel_chunks(requests.size(), threads, [&](int, size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) {
        const EvalRequest& req = requests[i];
        PerRequest& row = rows[i];
        if (req.relevant.empty() || scopes[i].empty()) continue;
        std::vector<ItemId> ranked = system(req, scopes[i]);
        std::unordered_set<ItemId> relevant(req.relevant.begin(),
                                            req.relevant.end());
        std::unordered_set<ItemId> hva(req.hva_relevant.begin(),
                                       req.hva_relevant.end());
        row.excluded = false;
        for (int k : cfg.ks) {
          auto r = recall_at_k(ranked, relevant, k);
          auto n = ndcg_at_k(ranked, relevant, k);
          row.recall[k] = r.value_or(0.0);
          row.ndcg[k] = n.value_or(0.0);
          row.hva_ndcg[k] =
              hva.empty() ? std::nullopt : ndcg_at_k(ranked, hva, k);
        }
        row.diversity = diversity_max_run(ranked, brand_of);
        row.novelty = novelty_recall(
            ranked, relevant,
            [&](ItemId id) {
              Timestamp act = activation_time_of(id);
              return req.timestamp - act <= cfg.freshness_window_seconds;
            },
            cfg.ks.empty() ? 10 : cfg.ks.front());
      }
    });

    SystemReport rep;
    rep.system = name;
    std::map<int, size_t> hva_counts;
    size_t novelty_count = 0;
    for (const auto& row : rows) {
      if (row.excluded) {
        rep.requests_excluded++;
        continue;
      }
      rep.requests_evaluated++;
      for (int k : cfg.ks) {
        rep.recall[k] += row.recall.at(k);
        rep.ndcg[k] += row.ndcg.at(k);
        if (auto h = row.hva_ndcg.at(k)) {
          rep.hva_ndcg[k] += *h;
          hva_counts[k]++;
        }
      }
      rep.mean_diversity_run += row.diversity;
      if (row.novelty) {
        rep.novelty += *row.novelty;
        novelty_count++;
      }
      int k0 = cfg.ks.empty() ? 10 : cfg.ks.front();
      rep.per_request_ndcg.push_back(row.ndcg.at(k0));
      rep.per_request_recall.push_back(row.recall.at(k0));
    }
    if (rep.requests_evaluated > 0) {
      for (int k : cfg.ks) {
        rep.recall[k] /= static_cast<double>(rep.requests_evaluated);
        rep.ndcg[k] /= static_cast<double>(rep.requests_evaluated);
        if (hva_counts.count(k) && hva_counts[k] > 0)
          rep.hva_ndcg[k] /= static_cast<double>(hva_counts[k]);
      }
      rep.mean_diversity_run /= static_cast<double>(rep.requests_evaluated);
      if (novelty_count > 0)
        rep.novelty /= static_cast<double>(novelty_count);
    }
    reports.emplace(name, std::move(rep));
  }
  return reports;
}

PopularityTable::PopularityTable(const std::vector<Event>& train_events,
                                 Timestamp window_end,
                                 int64_t window_seconds) {
  for (const auto& ev : train_events) {
    if (ev.action.timestamp > window_end) continue;
    if (window_seconds > 0 &&
        window_end - ev.action.timestamp > window_seconds)
      continue;
    counts_[ev.action.item_id] += 1;
  }
}

int64_t PopularityTable::count(ItemId id) const {
  auto it = counts_.find(id);
  return it == counts_.end() ? 0 : it->second;
}

std::vector<ItemId> PopularityTable::rank_scope(
    std::span<const ItemId> scope) const {
  std::vector<ItemId> out(scope.begin(), scope.end());
  std::sort(out.begin(), out.end(), [this](ItemId a, ItemId b) {
    int64_t ca = count(a), cb = count(b);
    if (ca != cb) return ca > cb;
    return a < b;
  });
  return out;
}

std::string report_table(const std::map<std::string, SystemReport>& reports,
                         const std::vector<int>& ks) {
  std::ostringstream os;
  os << "system";
  for (int k : ks) os << "\trecall@" << k;
  for (int k : ks) os << "\tndcg@" << k;
  for (int k : ks) os << "\thva_ndcg@" << k;
  os << "\tdiversity_run\tnovelty\trequests\n";
  for (const auto& [name, rep] : reports) {
    os << name;
    os.setf(std::ios::fixed);
    os.precision(4);
    for (int k : ks) os << '\t' << (rep.recall.count(k) ? rep.recall.at(k) : 0.0);
    for (int k : ks) os << '\t' << (rep.ndcg.count(k) ? rep.ndcg.at(k) : 0.0);
    for (int k : ks)
      os << '\t' << (rep.hva_ndcg.count(k) ? rep.hva_ndcg.at(k) : 0.0);
    os << '\t' << rep.mean_diversity_run << '\t' << rep.novelty << '\t'
       << rep.requests_evaluated << '\n';
  }
  return os.str();
}

std::string report_jsonl(const std::map<std::string, SystemReport>& reports) {
  std::ostringstream os;
  for (const auto& [name, rep] : reports) {
    nlohmann::json j;
    j["system"] = name;
    for (const auto& [k, v] : rep.recall) j["recall"][std::to_string(k)] = v;
    for (const auto& [k, v] : rep.ndcg) j["ndcg"][std::to_string(k)] = v;
    for (const auto& [k, v] : rep.hva_ndcg)
      j["hva_ndcg"][std::to_string(k)] = v;
    j["diversity_run"] = rep.mean_diversity_run;
    j["novelty"] = rep.novelty;
    j["requests_evaluated"] = rep.requests_evaluated;
    j["requests_excluded"] = rep.requests_excluded;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace rankstack::eval
