#include "rankstack/ann_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <unordered_set>

#include "rankstack/binio.hpp"
#include "rankstack/rng.hpp"

namespace rankstack::ann {

namespace {

void sort_hits(std::vector<Hit>& hits) {
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item_id < b.item_id;
  });
}

}  // namespace

double EmbeddingIndexVersion::score_against(std::span<const double> query,
                                            uint32_t node) const {
  const float* v = vec(node);
  double s = 0;
  for (int j = 0; j < d_emb_; ++j) s += query[static_cast<size_t>(j)] * v[j];
  return s;
}

std::shared_ptr<const EmbeddingIndexVersion> EmbeddingIndexVersion::build(
    const EmbeddingSet& set, IndexMode mode, HnswParams params,
    const std::unordered_map<ItemId, int32_t>& item_categories, uint64_t seed) {
  if (set.count() == 0)
    throw std::invalid_argument("cannot build an index from an empty set");
  auto idx = std::shared_ptr<EmbeddingIndexVersion>(new EmbeddingIndexVersion);
  idx->model_version_ = set.model_version;
  idx->d_emb_ = set.d_emb;
  idx->mode_ = mode;
  idx->params_ = params;
  idx->seed_ = seed;
  idx->vectors_ = set.data;
  idx->ids_ = set.ids;
  idx->dead_.assign(set.count(), 0);
  idx->categories_.resize(set.count(), kUnknownCode);
  for (size_t i = 0; i < set.count(); ++i) {
    ItemId id = set.ids[i];
    if (idx->node_of_.count(id))
      throw std::invalid_argument("duplicate item id in embedding set");
    idx->node_of_[id] = static_cast<uint32_t>(i);
    auto it = item_categories.find(id);
    int32_t cat = it == item_categories.end() ? kUnknownCode : it->second;
    idx->categories_[i] = cat;
    idx->by_category_[cat].push_back(static_cast<uint32_t>(i));
  }
  idx->live_count_ = set.count();
  if (mode == IndexMode::kApproximate) idx->build_graph(seed);
  return idx;
}

int EmbeddingIndexVersion::random_level(uint64_t key) const {
  double ml = 1.0 / std::log(static_cast<double>(std::max(2, params_.M)));
  Rng rng(seed_ ^ Rng::splitmix(key));
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  return static_cast<int>(-std::log(u) * ml);
}

std::vector<std::pair<double, uint32_t>> EmbeddingIndexVersion::search_layer(
    std::span<const double> query, uint32_t entry, int ef, int layer) const {
  // max-heap on score for candidates, min-heap boundary for results
  using Scored = std::pair<double, uint32_t>;
  std::priority_queue<Scored> candidates;  // best score on top
  std::priority_queue<Scored, std::vector<Scored>, std::greater<>> results;
  std::unordered_set<uint32_t> visited;

  double d0 = score_against(query, entry);
  candidates.push({d0, entry});
  results.push({d0, entry});
  visited.insert(entry);

  while (!candidates.empty()) {
    auto [score, node] = candidates.top();
    candidates.pop();
    if (!results.empty() && score < results.top().first &&
        static_cast<int>(results.size()) >= ef)
      break;
    const auto& nbrs = links_[node][static_cast<size_t>(layer)];
    for (uint32_t nb : nbrs) {
      if (!visited.insert(nb).second) continue;
      double s = score_against(query, nb);
      if (static_cast<int>(results.size()) < ef || s > results.top().first) {
        candidates.push({s, nb});
        results.push({s, nb});
        if (static_cast<int>(results.size()) > ef) results.pop();
      }
    }
  }
  std::vector<Scored> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::sort(out.begin(), out.end(), [](const Scored& a, const Scored& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  return out;
}

void EmbeddingIndexVersion::insert_node(uint32_t node) {
  int level = random_level(node);
  links_[node].assign(static_cast<size_t>(level) + 1, {});
  levels_[node] = level;

  if (max_level_ < 0) {
    entry_point_ = node;
    max_level_ = level;
    return;
  }

  std::vector<double> q(static_cast<size_t>(d_emb_));
  const float* v = vec(node);
  for (int j = 0; j < d_emb_; ++j) q[static_cast<size_t>(j)] = v[j];

  uint32_t current = entry_point_;
  for (int l = max_level_; l > level; --l) {
    auto best = search_layer(q, current, 1, l);
    if (!best.empty()) current = best[0].second;
  }
  for (int l = std::min(level, max_level_); l >= 0; --l) {
    auto cand = search_layer(q, current, params_.ef_construction, l);
    size_t m_max = l == 0 ? static_cast<size_t>(2 * params_.M)
                          : static_cast<size_t>(params_.M);
    size_t take = std::min(m_max, cand.size());
    for (size_t i = 0; i < take; ++i) {
      uint32_t nb = cand[i].second;
      if (nb == node) continue;
      links_[node][static_cast<size_t>(l)].push_back(nb);
      auto& back = links_[nb][static_cast<size_t>(l)];
      back.push_back(node);
      if (back.size() > m_max) {
        // keep the closest m_max neighbors
        std::vector<std::pair<double, uint32_t>> scored;
        scored.reserve(back.size());
        std::vector<double> nbv(static_cast<size_t>(d_emb_));
        const float* nv = vec(nb);
        for (int j = 0; j < d_emb_; ++j) nbv[static_cast<size_t>(j)] = nv[j];
        for (uint32_t x : back) scored.push_back({score_against(nbv, x), x});
        std::sort(scored.begin(), scored.end(),
                  [](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return a.second < b.second;
                  });
        back.clear();
        for (size_t i2 = 0; i2 < m_max; ++i2) back.push_back(scored[i2].second);
      }
    }
    if (!cand.empty()) current = cand[0].second;
  }
  if (level > max_level_) {
    entry_point_ = node;
    max_level_ = level;
  }
}

void EmbeddingIndexVersion::build_graph(uint64_t) {
  size_t n = ids_.size();
  links_.assign(n, {});
  levels_.assign(n, 0);
  max_level_ = -1;
  for (uint32_t node = 0; node < n; ++node) insert_node(node);
}

std::vector<Hit> EmbeddingIndexVersion::exact_scan(
    std::span<const double> query, int k,
    const std::vector<uint32_t>* subset) const {
  std::vector<Hit> hits;
  auto consider = [&](uint32_t node) {
    if (dead_[node]) return;
    hits.push_back({ids_[node], score_against(query, node)});
  };
  if (subset) {
    hits.reserve(subset->size());
    for (uint32_t node : *subset) consider(node);
  } else {
    hits.reserve(ids_.size());
    for (uint32_t node = 0; node < ids_.size(); ++node) consider(node);
  }
  sort_hits(hits);
  if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<size_t>(k));
  return hits;
}

std::vector<Hit> EmbeddingIndexVersion::graph_search(
    std::span<const double> query, int k, std::optional<int32_t> category) const {
  int ef = std::max(params_.ef_search, k);
  for (int attempt = 0; attempt < 4; ++attempt) {
    uint32_t current = entry_point_;
    for (int l = max_level_; l > 0; --l) {
      auto best = search_layer(query, current, 1, l);
      if (!best.empty()) current = best[0].second;
    }
    auto beam = search_layer(query, current, ef, 0);
    std::vector<Hit> hits;
    for (const auto& [score, node] : beam) {
      if (dead_[node]) continue;
      if (category && categories_[node] != *category) continue;
      hits.push_back({ids_[node], score});
    }
    sort_hits(hits);
    if (static_cast<int>(hits.size()) >= k || !category ||
        static_cast<size_t>(ef) >= ids_.size()) {
      if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<size_t>(k));
      return hits;
    }
    ef *= 4;  // widen the beam and retry the filtered query
  }
  // beam widening exhausted: scan the category subset
  auto it = by_category_.find(*category);
  return exact_scan(query, k, &it->second);
}

std::vector<Hit> EmbeddingIndexVersion::query_topk(
    std::span<const double> query, int k,
    std::optional<int32_t> category) const {
  if (static_cast<int>(query.size()) != d_emb_)
    throw std::invalid_argument("query dimension does not match index d_emb");
  if (k < 1) throw std::invalid_argument("k must be at least 1");

  const std::vector<uint32_t>* subset = nullptr;
  if (category) {
    auto it = by_category_.find(*category);
    if (it == by_category_.end()) return {};  // unknown category
    subset = &it->second;
  }
  if (mode_ == IndexMode::kExact) return exact_scan(query, k, subset);
  if (subset) {
    // small categories are cheaper to scan than to widen the beam over
    size_t threshold = std::max<size_t>(1024, 32 * static_cast<size_t>(k));
    if (subset->size() <= threshold) return exact_scan(query, k, subset);
  }
  return graph_search(query, k, category);
}

std::shared_ptr<const EmbeddingIndexVersion> EmbeddingIndexVersion::upsert(
    ItemId id, std::span<const double> embedding, int32_t category,
    const std::string& source_model_version) const {
  if (source_model_version != model_version_)
    throw std::invalid_argument(
        "upsert rejected: embedding version " + source_model_version +
        " does not match index version " + model_version_);
  if (static_cast<int>(embedding.size()) != d_emb_)
    throw std::invalid_argument("upsert rejected: dimension mismatch");

  auto next = std::shared_ptr<EmbeddingIndexVersion>(
      new EmbeddingIndexVersion(*this));
  auto it = next->node_of_.find(id);
  if (it != next->node_of_.end()) {
    uint32_t old = it->second;
    next->dead_[old] = 1;
    auto& list = next->by_category_[next->categories_[old]];
    list.erase(std::remove(list.begin(), list.end(), old), list.end());
    next->live_count_ -= 1;
  }
  uint32_t node = static_cast<uint32_t>(next->ids_.size());
  next->ids_.push_back(id);
  next->categories_.push_back(category);
  next->dead_.push_back(0);
  for (int j = 0; j < d_emb_; ++j)
    next->vectors_.push_back(static_cast<float>(embedding[static_cast<size_t>(j)]));
  next->node_of_[id] = node;
  next->by_category_[category].push_back(node);
  next->live_count_ += 1;
  if (mode_ == IndexMode::kApproximate) {
    next->links_.emplace_back();
    next->levels_.push_back(0);
    next->insert_node(node);
  }
  return next;
}

void EmbeddingIndexVersion::save_graph(const std::string& path) const {
  if (mode_ != IndexMode::kApproximate)
    throw std::logic_error("only approximate indexes persist a graph");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write graph " + path);
  out.write("RKG1", 4);
  binio::write_string32(out, model_version_);
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(d_emb_));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(ids_.size()));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(params_.M));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(params_.ef_construction));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(params_.ef_search));
  binio::write_le<uint32_t>(out, entry_point_);
  binio::write_le<int32_t>(out, max_level_);
  for (size_t node = 0; node < ids_.size(); ++node) {
    binio::write_le<int64_t>(out, ids_[node]);
    binio::write_le<uint8_t>(out, dead_[node]);
    binio::write_le<int32_t>(out, categories_[node]);
    binio::write_le<uint32_t>(out, static_cast<uint32_t>(levels_[node]));
    for (int l = 0; l <= levels_[node]; ++l) {
      const auto& nbrs = links_[node][static_cast<size_t>(l)];
      binio::write_le<uint32_t>(out, static_cast<uint32_t>(nbrs.size()));
      for (uint32_t nb : nbrs) binio::write_le<uint32_t>(out, nb);
    }
  }
}

std::shared_ptr<const EmbeddingIndexVersion> EmbeddingIndexVersion::load_graph(
    const std::string& path, const EmbeddingSet& set) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open graph " + path);
  binio::expect_magic(in, "RKG1", path);
  auto idx = std::shared_ptr<EmbeddingIndexVersion>(new EmbeddingIndexVersion);
  idx->model_version_ = binio::read_string32(in);
  if (idx->model_version_ != set.model_version)
    throw std::runtime_error("graph/embedding version mismatch");
  idx->d_emb_ = static_cast<int>(binio::read_le<uint32_t>(in));
  if (idx->d_emb_ != set.d_emb)
    throw std::runtime_error("graph/embedding dimension mismatch");
  uint32_t count = binio::read_le<uint32_t>(in);
  idx->mode_ = IndexMode::kApproximate;
  idx->params_.M = static_cast<int>(binio::read_le<uint32_t>(in));
  idx->params_.ef_construction = static_cast<int>(binio::read_le<uint32_t>(in));
  idx->params_.ef_search = static_cast<int>(binio::read_le<uint32_t>(in));
  idx->entry_point_ = binio::read_le<uint32_t>(in);
  idx->max_level_ = binio::read_le<int32_t>(in);

  std::unordered_map<ItemId, size_t> set_row;
  for (size_t i = 0; i < set.count(); ++i) set_row[set.ids[i]] = i;

  idx->ids_.resize(count);
  idx->dead_.resize(count);
  idx->categories_.resize(count);
  idx->levels_.resize(count);
  idx->links_.resize(count);
  idx->vectors_.resize(static_cast<size_t>(count) * idx->d_emb_);
  for (uint32_t node = 0; node < count; ++node) {
    idx->ids_[node] = binio::read_le<int64_t>(in);
    idx->dead_[node] = binio::read_le<uint8_t>(in);
    idx->categories_[node] = binio::read_le<int32_t>(in);
    idx->levels_[node] = static_cast<int>(binio::read_le<uint32_t>(in));
    idx->links_[node].resize(static_cast<size_t>(idx->levels_[node]) + 1);
    for (int l = 0; l <= idx->levels_[node]; ++l) {
      uint32_t deg = binio::read_le<uint32_t>(in);
      auto& nbrs = idx->links_[node][static_cast<size_t>(l)];
      nbrs.resize(deg);
      for (uint32_t i = 0; i < deg; ++i) nbrs[i] = binio::read_le<uint32_t>(in);
    }
    auto it = set_row.find(idx->ids_[node]);
    if (it == set_row.end())
      throw std::runtime_error("graph references item missing from the set");
    const float* src = set.row(it->second);
    std::copy(src, src + idx->d_emb_,
              idx->vectors_.begin() + static_cast<size_t>(node) * idx->d_emb_);
    if (!idx->dead_[node]) {
      idx->node_of_[idx->ids_[node]] = node;
      idx->by_category_[idx->categories_[node]].push_back(node);
      idx->live_count_ += 1;
    }
  }
  return idx;
}

// --- blue-green pair ------------------------------------------------------------

std::shared_ptr<const EmbeddingIndexVersion> IndexPair::active() const {
  std::lock_guard lock(mu_);
  return active_;
}

std::shared_ptr<const EmbeddingIndexVersion> IndexPair::staging() const {
  std::lock_guard lock(mu_);
  return staging_;
}

void IndexPair::stage(std::shared_ptr<const EmbeddingIndexVersion> next) {
  std::lock_guard lock(mu_);
  if (!next) throw std::invalid_argument("cannot stage a null index");
  if (active_ && next->model_version() == active_->model_version())
    throw std::invalid_argument(
        "staging version equals the active version: " + next->model_version());
  staging_ = std::move(next);
}

void IndexPair::swap() {
  std::lock_guard lock(mu_);
  if (!staging_) throw std::logic_error("swap requested with no staging index");
  if (active_ && staging_->model_version() == active_->model_version())
    throw std::logic_error("staging version equals the active version");
  active_ = std::move(staging_);
  staging_.reset();
}

void IndexPair::upsert(ItemId id, std::span<const double> embedding,
                       int32_t category,
                       const std::string& source_model_version) {
  std::lock_guard lock(mu_);
  if (staging_) {
    staging_ = staging_->upsert(id, embedding, category, source_model_version);
  } else if (active_) {
    active_ = active_->upsert(id, embedding, category, source_model_version);
  } else {
    throw std::logic_error("upsert with neither staging nor active index");
  }
}

}  // namespace rankstack::ann
