#include "rankstack/platform.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rankstack::platform {

void PlatformConfig::validate() const {
  head_weights.validate();
  policy.validate();
  if (page_size < 1) throw std::invalid_argument("page_size must be >= 1");
  if (retrieval_depth < page_size)
    throw std::invalid_argument("retrieval depth must cover at least one page");
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

PlatformConfig PlatformConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  PlatformConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "page_size") cfg.page_size = std::stoi(value);
      else if (key == "retrieval_depth") cfg.retrieval_depth = std::stoi(value);
      else if (key == "serve_position") cfg.serve_position = std::stod(value);
      else if (key == "head_weight.click")
        cfg.head_weights.w[0] = std::stod(value);
      else if (key == "head_weight.add_to_wishlist")
        cfg.head_weights.w[1] = std::stod(value);
      else if (key == "head_weight.add_to_cart")
        cfg.head_weights.w[2] = std::stod(value);
      else if (key == "head_weight.purchase")
        cfg.head_weights.w[3] = std::stod(value);
      else if (key == "policy.epsilon") cfg.policy.epsilon = std::stod(value);
      else if (key == "policy.k")
        cfg.policy.first_unexplored_positions = std::stoi(value);
      else if (key == "policy.max_brand_run")
        cfg.policy.max_brand_run = std::stoi(value);
      else if (key == "policy.purchase_window_days")
        cfg.policy.purchase_window_seconds = 24LL * 3600 * std::stoll(value);
      else if (key == "policy.freshness_window_days")
        cfg.policy.freshness_window_seconds = 24LL * 3600 * std::stoll(value);
      else if (key == "policy.seed") cfg.policy_seed = std::stoull(value);
      else if (key == "index.mode")
        cfg.index_mode = value == "exact" ? ann::IndexMode::kExact
                                          : ann::IndexMode::kApproximate;
      else if (key == "index.M") cfg.index_params.M = std::stoi(value);
      else if (key == "index.ef_construction")
        cfg.index_params.ef_construction = std::stoi(value);
      else if (key == "index.ef_search")
        cfg.index_params.ef_search = std::stoi(value);
      else if (key == "paths.catalog") cfg.catalog_path = value;
      else if (key == "paths.retrieval_checkpoint")
        cfg.retrieval_checkpoint = value;
      else if (key == "paths.retrieval_meta") cfg.retrieval_meta = value;
      else if (key == "paths.ranker_checkpoint") cfg.ranker_checkpoint = value;
      else if (key == "paths.ranker_meta") cfg.ranker_meta = value;
      else if (key == "paths.embeddings") cfg.embeddings_path = value;
      else
        throw std::runtime_error("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": bad value for " + key);
    }
  }
  cfg.validate();
  return cfg;
}

void PlatformConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << "page_size = " << page_size << '\n'
      << "retrieval_depth = " << retrieval_depth << '\n'
      << "serve_position = " << serve_position << '\n'
      << "head_weight.click = " << head_weights.w[0] << '\n'
      << "head_weight.add_to_wishlist = " << head_weights.w[1] << '\n'
      << "head_weight.add_to_cart = " << head_weights.w[2] << '\n'
      << "head_weight.purchase = " << head_weights.w[3] << '\n'
      << "policy.epsilon = " << policy.epsilon << '\n'
      << "policy.k = " << policy.first_unexplored_positions << '\n'
      << "policy.max_brand_run = " << policy.max_brand_run << '\n'
      << "policy.purchase_window_days = "
      << policy.purchase_window_seconds / (24LL * 3600) << '\n'
      << "policy.freshness_window_days = "
      << policy.freshness_window_seconds / (24LL * 3600) << '\n'
      << "policy.seed = " << policy_seed << '\n'
      << "index.mode = "
      << (index_mode == ann::IndexMode::kExact ? "exact" : "approximate")
      << '\n'
      << "index.M = " << index_params.M << '\n'
      << "index.ef_construction = " << index_params.ef_construction << '\n'
      << "index.ef_search = " << index_params.ef_search << '\n';
  if (!catalog_path.empty()) out << "paths.catalog = " << catalog_path << '\n';
  if (!retrieval_checkpoint.empty())
    out << "paths.retrieval_checkpoint = " << retrieval_checkpoint << '\n';
  if (!retrieval_meta.empty())
    out << "paths.retrieval_meta = " << retrieval_meta << '\n';
  if (!ranker_checkpoint.empty())
    out << "paths.ranker_checkpoint = " << ranker_checkpoint << '\n';
  if (!ranker_meta.empty()) out << "paths.ranker_meta = " << ranker_meta << '\n';
  if (!embeddings_path.empty())
    out << "paths.embeddings = " << embeddings_path << '\n';
}

// --- sequence cache -------------------------------------------------------------

void SequenceCache::ingest(CustomerId customer, const Action& action) {
  if (customer <= 0) throw std::invalid_argument("customer_id must be positive");
  if (action.item_id <= 0) throw std::invalid_argument("item_id must be positive");
  if (action.timestamp < 0)
    throw std::invalid_argument("timestamp must be non-negative");
  Shard& shard = shard_for(customer);
  std::lock_guard lock(shard.mu);
  auto& seq = shard.sequences[customer];
  // out-of-order arrivals are inserted in timestamp order
  auto pos = std::upper_bound(
      seq.begin(), seq.end(), action,
      [](const Action& a, const Action& b) { return a.timestamp < b.timestamp; });
  seq.insert(pos, action);
  if (seq.size() > kMaxSequenceLength) seq.erase(seq.begin());
}

CustomerSequence SequenceCache::snapshot(CustomerId customer) const {
  CustomerSequence out;
  out.customer_id = customer;
  Shard& shard = shard_for(customer);
  std::lock_guard lock(shard.mu);
  auto it = shard.sequences.find(customer);
  if (it != shard.sequences.end()) out.actions = it->second;
  return out;
}

void SequenceCache::warm(const std::vector<Event>& events) {
  for (const auto& ev : events) ingest(ev.customer_id, ev.action);
}

size_t SequenceCache::customers() const {
  size_t n = 0;
  for (const auto& shard : shards_) {
    std::lock_guard lock(shard.mu);
    n += shard.sequences.size();
  }
  return n;
}

void SequenceCache::snapshot_to_disk(const std::string& events_path) const {
  std::vector<Event> events;
  for (const auto& shard : shards_) {
    std::lock_guard lock(shard.mu);
    for (const auto& [customer, actions] : shard.sequences)
      for (const auto& a : actions) events.push_back({customer, a});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.customer_id != b.customer_id) return a.customer_id < b.customer_id;
    return a.action.timestamp < b.action.timestamp;
  });
  save_events_jsonl(events_path, events);
}

// --- deployment -----------------------------------------------------------------

Deployment::Deployment(TwoTowerModel r, RankerModel rk,
                       std::shared_ptr<const ann::EmbeddingIndexVersion> idx,
                       CatalogIndex cat)
    : version(r.version()),
      retrieval(std::move(r)),
      ranker(std::move(rk)),
      index(std::move(idx)),
      catalog(std::move(cat)) {
  ranker_cache = ranker.build_item_cache(catalog);
  item_meta = retrieval.metadata_embeddings(catalog);
}

Engine::Engine(PlatformConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Engine::ingest_event(CustomerId customer, const Action& action) {
  cache_.ingest(customer, action);
}

std::shared_ptr<const Deployment> Engine::active() const {
  std::lock_guard lock(active_mu_);
  return active_;
}

DeployReport Engine::deploy(TwoTowerModel retrieval, RankerModel ranker,
                            const EmbeddingSet& embeddings,
                            CatalogIndex catalog) {
  std::lock_guard deploy_lock(deploy_mu_);
  if (embeddings.model_version != retrieval.version())
    throw std::invalid_argument(
        "deploy rejected: embedding set version '" + embeddings.model_version +
        "' does not match retrieval model version '" + retrieval.version() +
        "'");
  auto current = active();
  if (current && current->version == retrieval.version())
    throw std::invalid_argument("deploy rejected: version '" +
                                retrieval.version() + "' is already active");

  std::unordered_map<ItemId, int32_t> categories;
  for (const auto& item : catalog.items())
    categories[item.item_id] = item.category_id;
  auto index = ann::EmbeddingIndexVersion::build(embeddings, cfg_.index_mode,
                                                 cfg_.index_params, categories);
  auto next = std::make_shared<Deployment>(std::move(retrieval),
                                           std::move(ranker), std::move(index),
                                           std::move(catalog));
  DeployReport report;
  report.previous_version = current ? current->version : "";
  report.new_version = next->version;
  {
    std::lock_guard lock(active_mu_);
    active_ = std::move(next);
  }
  return report;
}

DeployReport Engine::deploy_from_paths() {
  if (cfg_.catalog_path.empty() || cfg_.embeddings_path.empty() ||
      cfg_.retrieval_checkpoint.empty() || cfg_.ranker_checkpoint.empty())
    throw std::invalid_argument("deploy_from_paths: artifact paths missing");
  auto retrieval =
      TwoTowerModel::load(cfg_.retrieval_checkpoint, cfg_.retrieval_meta);
  auto ranker = RankerModel::load(cfg_.ranker_checkpoint, cfg_.ranker_meta);
  auto embeddings = EmbeddingSet::load(cfg_.embeddings_path);
  CatalogIndex catalog(load_catalog_jsonl(cfg_.catalog_path));
  return deploy(std::move(retrieval), std::move(ranker), embeddings,
                std::move(catalog));
}

RankResponse Engine::handle_rank(const RankRequest& request) const {
  RankResponse resp;
  auto dep = active();
  if (!dep) {
    resp.status = RankStatus::kServiceUnavailable;
    resp.detail = "no active deployment";
    return resp;
  }
  resp.model_version = dep->version;
  resp.served_at = request.now.value_or(static_cast<Timestamp>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count()));

  if (!request.category_id ||
      !dep->catalog.category_items(*request.category_id)) {
    resp.status = RankStatus::kUnknownCategory;
    resp.detail = "unknown category";
    return resp;
  }
  int32_t category = *request.category_id;

  CustomerSequence seq = cache_.snapshot(request.customer_id);
  LocalContext local;
  local.browse_category_id = category;
  local.is_search = request.is_search;
  if (request.is_search && request.query_id) local.search_query_id = request.query_id;

  // retrieve
  nn::Tensor u = dep->retrieval.embed_customer(seq, request.global, local,
                                               dep->catalog);
  std::span<const double> uq(u.data(), u.numel());
  auto hits = dep->index->query_topk(uq, cfg_.retrieval_depth, category);
  if (hits.empty()) {
    resp.status = RankStatus::kOk;
    return resp;
  }
  std::vector<ItemId> candidates;
  candidates.reserve(hits.size());
  for (const auto& h : hits) candidates.push_back(h.item_id);

  // rank at the fixed serving position
  auto scored = dep->ranker.score_with_cache(seq, request.global, local,
                                             candidates, dep->catalog,
                                             dep->ranker_cache);
  for (auto& s : scored)
    s.blended_score = blend(s.head_probabilities, cfg_.head_weights);

  // policy: exploration pool from fresh items of the scope not already ranked
  policy::CandidatePools pools;
  pools.organic = std::move(scored);
  std::unordered_set<ItemId> organic_ids;
  for (const auto& s : pools.organic) organic_ids.insert(s.item_id);

  // customer's mean metadata embedding drives content-based fresh relevance
  const int d_emb = dep->item_meta.cols();
  std::vector<double> customer_meta(static_cast<size_t>(d_emb), 0.0);
  int meta_n = 0;
  for (const auto& a : seq.actions) {
    int dense = dep->catalog.dense_index(a.item_id);
    if (dense == 0) continue;
    const double* row = dep->item_meta.row_ptr(dense - 1);
    for (int j = 0; j < d_emb; ++j) customer_meta[static_cast<size_t>(j)] += row[j];
    ++meta_n;
  }
  if (meta_n > 0)
    for (auto& x : customer_meta) x /= meta_n;

  const auto* scope_items = dep->catalog.category_items(category);
  for (ItemId id : *scope_items) {
    if (organic_ids.count(id)) continue;
    const Item* item = dep->catalog.find(id);
    if (item->activation_time > resp.served_at) continue;
    if (resp.served_at - item->activation_time >
        cfg_.policy.freshness_window_seconds)
      continue;
    int dense = dep->catalog.dense_index(id);
    const double* row = dep->item_meta.row_ptr(dense - 1);
    double rel = 0;
    for (int j = 0; j < d_emb; ++j)
      rel += customer_meta[static_cast<size_t>(j)] * row[j];
    ScoredItem fresh;
    fresh.item_id = id;
    fresh.blended_score = std::max(rel, 1e-6);
    pools.fresh.push_back(fresh);
  }

  // reproducible exploration: one stream per customer and day
  Rng policy_rng(Rng::splitmix(cfg_.policy_seed ^
                               static_cast<uint64_t>(request.customer_id) *
                                   0x9e3779b97f4a7c15ULL) ^
                 static_cast<uint64_t>(resp.served_at / 86400));
  RankedList page = policy::mix_new_items(pools, cfg_.policy, policy_rng);
  page = policy::downrank_purchased(page, seq.actions, cfg_.policy,
                                    resp.served_at);
  page = policy::brand_diversity_pass(
      page,
      [&dep](ItemId id) {
        const Item* item = dep->catalog.find(id);
        return item ? item->brand_id : kUnknownCode;
      },
      cfg_.policy.max_brand_run);

  int page_size = request.page_size.value_or(cfg_.page_size);
  size_t begin = static_cast<size_t>(request.page_index) *
                 static_cast<size_t>(page_size);
  resp.status = RankStatus::kOk;
  if (begin < page.items.size()) {
    size_t end = std::min(page.items.size(),
                          begin + static_cast<size_t>(page_size));
    resp.items.assign(page.items.begin() + static_cast<ptrdiff_t>(begin),
                      page.items.begin() + static_cast<ptrdiff_t>(end));
  }
  return resp;
}

// --- offline protocol glue ------------------------------------------------------

eval::ScopeProvider make_scope_provider(const CatalogIndex& catalog) {
  return [&catalog](const eval::EvalRequest& req) -> std::vector<ItemId> {
    if (!req.local.browse_category_id) return {};
    const auto* items = catalog.category_items(*req.local.browse_category_id);
    if (!items) return {};
    std::vector<ItemId> scope;
    scope.reserve(items->size());
    for (ItemId id : *items) {
      const Item* item = catalog.find(id);
      if (item && item->activation_time <= req.timestamp) scope.push_back(id);
    }
    return scope;
  };
}

SystemBundle build_systems(const TwoTowerModel* retrieval,
                           const RankerModel* ranker,
                           const CatalogIndex& catalog,
                           const eval::PopularityTable* popularity,
                           const PlatformConfig& cfg,
                           const synth::GroundTruth* truth, int depth) {
  SystemBundle bundle;
  if (popularity) {
    bundle.systems["popularity"] = [popularity](const eval::EvalRequest&,
                                                std::span<const ItemId> scope) {
      return popularity->rank_scope(scope);
    };
  }

  if (retrieval) {
    // scoring both systems against a shared precomputed item matrix
    auto items = std::make_shared<nn::Tensor>(
        retrieval->all_item_embeddings(catalog));
    auto score_scope = [retrieval, items, &catalog](
                           const eval::EvalRequest& req,
                           std::span<const ItemId> scope) {
      nn::Tensor u = retrieval->embed_customer(req.history, req.global,
                                               req.local, catalog);
      std::vector<std::pair<double, ItemId>> scored;
      scored.reserve(scope.size());
      for (ItemId id : scope) {
        int dense = catalog.dense_index(id);
        if (dense == 0) continue;
        double s = nn::dot(u.data(), items->row_ptr(dense - 1),
                           static_cast<int>(u.numel()));
        scored.push_back({s, id});
      }
      std::sort(scored.begin(), scored.end(),
                [](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first > b.first;
                  return a.second < b.second;
                });
      return scored;
    };

    bundle.systems["retrieval"] = [score_scope](const eval::EvalRequest& req,
                                                std::span<const ItemId> scope) {
      auto scored = score_scope(req, scope);
      std::vector<ItemId> out;
      out.reserve(scored.size());
      for (const auto& [s, id] : scored) out.push_back(id);
      return out;
    };

    if (ranker) {
      auto cache = std::make_shared<RankerItemCache>(
          ranker->build_item_cache(catalog));
      auto item_meta =
          std::make_shared<nn::Tensor>(retrieval->metadata_embeddings(catalog));
      HeadWeights weights = cfg.head_weights;
      policy::PolicyConfig pol = cfg.policy;
      uint64_t seed = cfg.policy_seed;
      bundle.systems["full"] = [ranker, cache, score_scope, &catalog, weights,
                                pol, seed, item_meta,
                                depth](const eval::EvalRequest& req,
                                       std::span<const ItemId> scope) {
        auto scored = score_scope(req, scope);
        if (static_cast<int>(scored.size()) > depth)
          scored.resize(static_cast<size_t>(depth));
        std::vector<ItemId> candidates;
        candidates.reserve(scored.size());
        for (const auto& [s, id] : scored) candidates.push_back(id);
        if (candidates.empty()) return candidates;
        auto ranked = ranker->score_with_cache(req.history, req.global,
                                               req.local, candidates, catalog,
                                               *cache);
        policy::CandidatePools pools;
        for (auto& s : ranked) {
          s.blended_score = blend(s.head_probabilities, weights);
          pools.organic.push_back(std::move(s));
        }
        std::unordered_set<ItemId> organic_ids;
        for (const auto& s : pools.organic) organic_ids.insert(s.item_id);
        const int d_emb = item_meta->cols();
        std::vector<double> customer_meta(static_cast<size_t>(d_emb), 0.0);
        int meta_n = 0;
        for (const auto& a : req.history.actions) {
          int dense = catalog.dense_index(a.item_id);
          if (dense == 0) continue;
          const double* row = item_meta->row_ptr(dense - 1);
          for (int j = 0; j < d_emb; ++j)
            customer_meta[static_cast<size_t>(j)] += row[j];
          ++meta_n;
        }
        if (meta_n > 0)
          for (auto& x : customer_meta) x /= meta_n;
        for (ItemId id : scope) {
          if (organic_ids.count(id)) continue;
          const Item* item = catalog.find(id);
          if (!item || item->activation_time > req.timestamp) continue;
          if (req.timestamp - item->activation_time >
              pol.freshness_window_seconds)
            continue;
          int dense = catalog.dense_index(id);
          const double* row = item_meta->row_ptr(dense - 1);
          double rel = 0;
          for (int j = 0; j < d_emb; ++j)
            rel += customer_meta[static_cast<size_t>(j)] * row[j];
          ScoredItem fresh;
          fresh.item_id = id;
          fresh.blended_score = std::max(rel, 1e-6);
          pools.fresh.push_back(fresh);
        }
        Rng rng(Rng::splitmix(seed ^ static_cast<uint64_t>(req.customer_id) *
                                         0x9e3779b97f4a7c15ULL) ^
                static_cast<uint64_t>(req.timestamp / 86400));
        RankedList page = policy::mix_new_items(pools, pol, rng);
        page = policy::downrank_purchased(page, req.history.actions, pol,
                                          req.timestamp);
        page = policy::brand_diversity_pass(
            page,
            [&catalog](ItemId id) {
              const Item* item = catalog.find(id);
              return item ? item->brand_id : kUnknownCode;
            },
            pol.max_brand_run);
        std::vector<ItemId> out;
        out.reserve(page.items.size());
        for (const auto& s : page.items) out.push_back(s.item_id);
        return out;
      };
    }
  }

  if (truth) {
    bundle.systems["oracle"] = [truth](const eval::EvalRequest& req,
                                       std::span<const ItemId> scope) {
      int32_t category = req.local.browse_category_id.value_or(0);
      auto scores =
          truth->oracle_scores(req.customer_id, req.timestamp, category, scope);
      std::vector<size_t> idx(scope.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return scope[a] < scope[b];
      });
      std::vector<ItemId> out;
      out.reserve(scope.size());
      for (size_t i : idx) out.push_back(scope[i]);
      return out;
    };
  }
  return bundle;
}

}  // namespace rankstack::platform
