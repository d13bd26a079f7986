#include "rankstack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rankstack/binio.hpp"

namespace rankstack::synth {

void GeneratorConfig::validate() const {
  auto in01 = [](double x) { return x > 0.0 && x < 1.0; };
  if (num_customers < 1 || num_items < 1 || num_brands < 1 ||
      num_categories < 1 || latent_dim < 1 || page_size < 1)
    throw std::invalid_argument("generator counts must be at least 1");
  if (!in01(escalate_a2w) || !in01(escalate_a2c) || !in01(escalate_purchase))
    throw std::invalid_argument("escalation rates must lie in (0, 1)");
  if (fresh_item_fraction < 0 || fresh_item_fraction >= 1)
    throw std::invalid_argument("fresh_item_fraction must lie in [0, 1)");
}

namespace {

int sample_poisson(double mean, Rng& rng) {
  double l = std::exp(-mean);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > l && k < 1000);
  return k - 1;
}

size_t weighted_pick(std::span<const double> weights, Rng& rng) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u <= 0) return i;
  }
  return weights.size() - 1;
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

std::vector<double> GroundTruth::taste(CustomerId customer,
                                       int32_t category) const {
  Rng rng(Rng::splitmix(seed ^ 0x7a5745u) ^
          Rng::splitmix(static_cast<uint64_t>(customer) * 0x100000001b3ULL +
                        static_cast<uint64_t>(category)));
  std::vector<double> t(static_cast<size_t>(latent_dim));
  for (auto& x : t) x = rng.normal();
  return t;
}

void GroundTruth::build_indexes() const {
  if (session_index_.empty()) {
    for (size_t i = 0; i < sessions.size(); ++i)
      session_index_[{sessions[i].customer_id, sessions[i].t_start}] = i;
  }
  if (item_index_.empty()) {
    for (size_t i = 0; i < item_ids.size(); ++i) item_index_[item_ids[i]] = i;
  }
}

const SessionTruth* GroundTruth::session_at(CustomerId customer,
                                            Timestamp t_start) const {
  build_indexes();
  auto it = session_index_.find({customer, t_start});
  return it == session_index_.end() ? nullptr : &sessions[it->second];
}

std::vector<double> GroundTruth::oracle_scores(
    CustomerId customer, Timestamp t_start, int32_t category,
    std::span<const ItemId> ids) const {
  build_indexes();
  std::vector<double> pref = taste(customer, category);
  if (const SessionTruth* s = session_at(customer, t_start)) {
    for (int d = 0; d < latent_dim; ++d)
      pref[static_cast<size_t>(d)] += s->intent[static_cast<size_t>(d)];
  }
  std::vector<double> out(ids.size(), 0.0);
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = item_index_.find(ids[i]);
    if (it == item_index_.end()) continue;
    const double* w = style_of(it->second);
    double s = 0;
    for (int d = 0; d < latent_dim; ++d)
      s += pref[static_cast<size_t>(d)] * w[d];
    out[i] = s;
  }
  return out;
}

void GroundTruth::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ground truth " + path);
  out.write("RKT1", 4);
  binio::write_le<uint64_t>(out, seed);
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(latent_dim));
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(item_ids.size()));
  for (size_t i = 0; i < item_ids.size(); ++i) {
    binio::write_le<int64_t>(out, item_ids[i]);
    binio::write_le<int32_t>(out, item_categories[i]);
    for (int d = 0; d < latent_dim; ++d)
      binio::write_le<double>(out, style_of(i)[d]);
  }
  binio::write_le<uint32_t>(out, static_cast<uint32_t>(sessions.size()));
  for (const auto& s : sessions) {
    binio::write_le<int64_t>(out, s.customer_id);
    binio::write_le<int64_t>(out, s.t_start);
    binio::write_le<int32_t>(out, s.category_id);
    binio::write_le<uint8_t>(out, s.is_search ? 1 : 0);
    binio::write_le<int32_t>(out, s.query_id);
    for (int d = 0; d < latent_dim; ++d)
      binio::write_le<double>(out, s.intent[static_cast<size_t>(d)]);
  }
}

GroundTruth GroundTruth::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ground truth " + path);
  binio::expect_magic(in, "RKT1", path);
  GroundTruth gt;
  gt.seed = binio::read_le<uint64_t>(in);
  gt.latent_dim = static_cast<int>(binio::read_le<uint32_t>(in));
  uint32_t n_items = binio::read_le<uint32_t>(in);
  gt.item_ids.resize(n_items);
  gt.item_categories.resize(n_items);
  gt.item_style.resize(static_cast<size_t>(n_items) * gt.latent_dim);
  for (uint32_t i = 0; i < n_items; ++i) {
    gt.item_ids[i] = binio::read_le<int64_t>(in);
    gt.item_categories[i] = binio::read_le<int32_t>(in);
    for (int d = 0; d < gt.latent_dim; ++d)
      gt.item_style[static_cast<size_t>(i) * gt.latent_dim +
                    static_cast<size_t>(d)] = binio::read_le<double>(in);
  }
  uint32_t n_sessions = binio::read_le<uint32_t>(in);
  gt.sessions.resize(n_sessions);
  for (auto& s : gt.sessions) {
    s.customer_id = binio::read_le<int64_t>(in);
    s.t_start = binio::read_le<int64_t>(in);
    s.category_id = binio::read_le<int32_t>(in);
    s.is_search = binio::read_le<uint8_t>(in) != 0;
    s.query_id = binio::read_le<int32_t>(in);
    s.intent.resize(static_cast<size_t>(gt.latent_dim));
    for (auto& x : s.intent) x = binio::read_le<double>(in);
  }
  return gt;
}

// ---------------------------------------------------------------------------

SyntheticCorpus generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int m = cfg.latent_dim;

  // brand style centers and a zipf-ish brand prior
  std::vector<double> brand_style(static_cast<size_t>(cfg.num_brands) * m);
  std::vector<double> brand_weight(static_cast<size_t>(cfg.num_brands));
  for (int b = 0; b < cfg.num_brands; ++b) {
    for (int d = 0; d < m; ++d)
      brand_style[static_cast<size_t>(b) * m + d] = rng.normal();
    brand_weight[static_cast<size_t>(b)] = 1.0 / (b + 1.0);
  }

  // Category sizes and per-category request volumes both follow power laws.
  // The gap between the two exponents is what realizes the configured
  // popularity exponent in aggregate interaction counts:
  // count-per-item(c) ~ volume/size ~ c^-(v-s), rank(c) ~ c^(1-s),
  // so the log-log slope is (v-s)/(1-s) = popularity_exponent.
  // Sizes follow a steep power law and request volume concentrates on the
  // head categories, keeping typical scopes large relative to the metric
  // cutoffs. Aggregate interaction counts then inherit their slope from the
  // within-category popularity prior below.
  const double size_exp = 0.8;
  const double volume_exp = 2.2;
  std::vector<double> category_size_weight(
      static_cast<size_t>(cfg.num_categories));
  std::vector<double> category_volume_weight(
      static_cast<size_t>(cfg.num_categories));
  for (int c = 0; c < cfg.num_categories; ++c) {
    category_size_weight[static_cast<size_t>(c)] =
        1.0 / std::pow(c + 1.0, size_exp);
    category_volume_weight[static_cast<size_t>(c)] =
        1.0 / std::pow(c + 1.0, volume_exp);
  }

  // color directions in style space tie colors to styles
  std::vector<double> color_dir(static_cast<size_t>(cfg.num_colors) * m);
  for (int c = 0; c < cfg.num_colors; ++c) {
    double norm = 0;
    for (int d = 0; d < m; ++d) {
      double x = rng.normal();
      color_dir[static_cast<size_t>(c) * m + d] = x;
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < m; ++d) color_dir[static_cast<size_t>(c) * m + d] /= norm;
  }

  // visual projection: style -> d_pre
  std::vector<double> vis_proj(static_cast<size_t>(cfg.d_pre) * m);
  for (auto& x : vis_proj) x = rng.normal() / std::sqrt(static_cast<double>(m));

  SyntheticCorpus corpus;
  corpus.truth.seed = cfg.seed;
  corpus.truth.latent_dim = m;

  const Timestamp day = 24 * 3600;
  const Timestamp t_end = cfg.start_time + cfg.days_total * day;

  // items
  struct ItemState {
    ItemId id;
    int32_t category, brand, color;
    std::vector<double> style;
    Timestamp activation;
    double prior;  // popularity prior weight
  };
  std::vector<ItemState> items(static_cast<size_t>(cfg.num_items));
  std::vector<int> prior_order(static_cast<size_t>(cfg.num_items));
  std::iota(prior_order.begin(), prior_order.end(), 0);
  for (size_t i = prior_order.size(); i > 1; --i)
    std::swap(prior_order[i - 1], prior_order[rng.uniform_index(i)]);

  std::vector<std::vector<ItemId>> category_items(
      static_cast<size_t>(cfg.num_categories) + 1);
  for (int i = 0; i < cfg.num_items; ++i) {
    ItemState& it = items[static_cast<size_t>(i)];
    it.id = 1001 + i;
    it.category =
        1 + static_cast<int32_t>(weighted_pick(category_size_weight, rng));
    it.brand = 1 + static_cast<int32_t>(weighted_pick(brand_weight, rng));
    it.style.resize(static_cast<size_t>(m));
    const double* bs = brand_style.data() + static_cast<size_t>(it.brand - 1) * m;
    double norm = 0;
    for (int d = 0; d < m; ++d) {
      double x = 0.6 * bs[d] + 0.9 * rng.normal();
      it.style[static_cast<size_t>(d)] = x;
      norm += x * x;
    }
    // constant style norm: no item is globally more clickable than another,
    // so realized popularity stays pinned to the exposure structure
    norm = std::sqrt(norm / m);
    for (int d = 0; d < m; ++d) it.style[static_cast<size_t>(d)] /= norm;
    // color follows the closest color direction, with noise
    int best_color = 0;
    double best = -1e30;
    for (int c = 0; c < cfg.num_colors; ++c) {
      double s = 0.4 * rng.normal();
      for (int d = 0; d < m; ++d)
        s += color_dir[static_cast<size_t>(c) * m + d] *
             it.style[static_cast<size_t>(d)];
      if (s > best) {
        best = s;
        best_color = c;
      }
    }
    it.color = 1 + best_color;
    // mild within-category tilt; the realized corpus slope is dominated by
    // the category volume structure and was calibrated at default scale
    it.prior = 1.0 / std::pow(prior_order[static_cast<size_t>(i)] + 1.0,
                              0.5 * cfg.popularity_exponent);
    bool fresh = rng.uniform() < cfg.fresh_item_fraction;
    it.activation = fresh ? cfg.start_time +
                                static_cast<Timestamp>(
                                    (0.55 + 0.35 * rng.uniform()) *
                                    cfg.days_total) *
                                    day
                          : cfg.start_time - 30 * day;
    category_items[static_cast<size_t>(it.category)].push_back(it.id);
    corpus.truth.item_ids.push_back(it.id);
    corpus.truth.item_categories.push_back(it.category);
    for (int d = 0; d < m; ++d)
      corpus.truth.item_style.push_back(it.style[static_cast<size_t>(d)]);
  }
  std::map<ItemId, const ItemState*> item_of;
  for (const auto& it : items) item_of[it.id] = &it;

  double mean_log_prior = 0;
  for (const auto& it : items) mean_log_prior += std::log(it.prior);
  mean_log_prior /= cfg.num_items;

  // query vocabulary: (category, color) pairs
  // query id = (category-1) * queries_per_category + slot + 1
  // queries cover the colors round-robin so search exposure spreads evenly
  std::vector<std::vector<int>> query_color(
      static_cast<size_t>(cfg.num_categories) + 1);
  for (int c = 1; c <= cfg.num_categories; ++c) {
    std::vector<int> slots;
    for (int q = 0; q < cfg.queries_per_category; ++q)
      slots.push_back(1 + (q % cfg.num_colors));
    query_color[static_cast<size_t>(c)] = std::move(slots);
  }

  // customers
  std::vector<int64_t> interaction_counts(static_cast<size_t>(cfg.num_items), 0);
  for (int u = 0; u < cfg.num_customers; ++u) {
    CustomerId customer = 1 + u;
    int32_t country = 1 + static_cast<int32_t>(rng.uniform_index(
                              static_cast<uint64_t>(cfg.num_countries)));
    // home categories: a few favorites blended with the global volume prior
    std::vector<double> home = category_volume_weight;
    for (int pick = 0; pick < 3; ++pick) {
      size_t c = weighted_pick(category_volume_weight, rng);
      home[c] += 1.2;
    }
    int sessions = 1 + sample_poisson(
                           std::max(0.0, cfg.mean_sessions_per_customer - 1.0),
                           rng);
    std::vector<Timestamp> starts;
    for (int s = 0; s < sessions; ++s)
      starts.push_back(cfg.start_time +
                       static_cast<Timestamp>(rng.uniform() *
                                              static_cast<double>(t_end - day -
                                                                  cfg.start_time)));
    std::sort(starts.begin(), starts.end());
    // one request per session; keep session starts at least an hour apart
    for (size_t s = 1; s < starts.size(); ++s)
      starts[s] = std::max(starts[s], starts[s - 1] + 3600);

    for (size_t s = 0; s < starts.size(); ++s) {
      Timestamp t_req = starts[s];
      int32_t category =
          1 + static_cast<int32_t>(weighted_pick(home, rng));
      if (category_items[static_cast<size_t>(category)].empty()) continue;
      bool is_search = rng.uniform() < cfg.search_fraction;
      int query_slot =
          is_search ? static_cast<int>(rng.uniform_index(
                          static_cast<uint64_t>(cfg.queries_per_category)))
                    : 0;
      int32_t query_id =
          is_search ? (category - 1) * cfg.queries_per_category + query_slot + 1
                    : 0;
      int query_col =
          is_search ? query_color[static_cast<size_t>(category)]
                                 [static_cast<size_t>(query_slot)]
                    : 0;

      std::vector<double> pref = corpus.truth.taste(customer, category);
      SessionTruth truth;
      truth.customer_id = customer;
      truth.t_start = t_req;
      truth.category_id = category;
      truth.is_search = is_search;
      truth.query_id = query_id;
      truth.intent.resize(static_cast<size_t>(m));
      for (int d = 0; d < m; ++d) {
        double offset = cfg.intent_drift * rng.normal();
        if (is_search)  // searching narrows intent toward the queried color
          offset += 1.0 * color_dir[static_cast<size_t>(query_col - 1) * m + d];
        truth.intent[static_cast<size_t>(d)] = offset;
        pref[static_cast<size_t>(d)] += offset;
      }

      // scope: activated items of the category (and color for searches)
      std::vector<const ItemState*> scope;
      for (ItemId id : category_items[static_cast<size_t>(category)]) {
        const ItemState* it = item_of[id];
        if (it->activation > t_req) continue;
        if (is_search && it->color != query_col) continue;
        scope.push_back(it);
      }
      if (scope.size() < 2) continue;

      // behavior policy: Gumbel-perturbed utilities make page exposure a
      // softmax sample, so aggregate exposure follows the popularity prior
      std::vector<std::pair<double, const ItemState*>> scored;
      scored.reserve(scope.size());
      for (const ItemState* it : scope) {
        double pref_score = 0;
        for (int d = 0; d < m; ++d)
          pref_score += pref[static_cast<size_t>(d)] *
                        it->style[static_cast<size_t>(d)];
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        double gumbel = -std::log(-std::log(u));
        double score = cfg.page_pref_weight * pref_score +
                       cfg.page_pop_weight *
                           (std::log(it->prior) - mean_log_prior) +
                       cfg.page_noise * gumbel;
        if (t_req - it->activation <= 14 * day) score += cfg.page_fresh_boost;
        scored.push_back({score, it});
      }
      std::sort(scored.begin(), scored.end(),
                [](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first > b.first;
                  return a.second->id < b.second->id;
                });
      size_t page_n = std::min<size_t>(static_cast<size_t>(cfg.page_size),
                                       scored.size());

      RequestRecord req;
      req.customer_id = customer;
      req.timestamp = t_req;
      req.global.country_id = country;
      req.global.device_type_id =
          1 + static_cast<int32_t>(rng.uniform_index(
                  static_cast<uint64_t>(cfg.num_devices)));
      req.local.is_search = is_search;
      req.local.browse_category_id = category;
      if (is_search) req.local.search_query_id = query_id;

      Timestamp cursor = t_req;
      for (size_t p = 0; p < page_n; ++p) {
        const ItemState* it = scored[p].second;
        PageImpression imp;
        imp.item_id = it->id;
        imp.position = static_cast<int>(p);

        double pref_score = 0;
        for (int d = 0; d < m; ++d)
          pref_score += pref[static_cast<size_t>(d)] *
                        it->style[static_cast<size_t>(d)];
        double bias =
            1.0 / (1.0 + cfg.position_bias_decay * static_cast<double>(p));
        double p_click =
            bias * sigmoid(cfg.click_pref_weight * pref_score +
                           cfg.click_pop_weight *
                               (std::log(it->prior) - mean_log_prior) +
                           cfg.click_base);
        if (rng.uniform() < p_click) {
          cursor += 20 + static_cast<Timestamp>(rng.uniform_index(40));
          imp.labels[0] = 1;
          corpus.events.push_back(
              {customer, {it->id, ActionType::kClick, cursor}});
          // stronger preference escalates further down the chain
          double sharpen =
              0.6 + 0.8 * sigmoid(cfg.escalation_affinity * pref_score);
          if (rng.uniform() < cfg.escalate_a2w * sharpen) {
            cursor += 5 + static_cast<Timestamp>(rng.uniform_index(20));
            imp.labels[1] = 1;
            corpus.events.push_back(
                {customer, {it->id, ActionType::kAddToWishlist, cursor}});
            if (rng.uniform() < cfg.escalate_a2c * sharpen) {
              cursor += 5 + static_cast<Timestamp>(rng.uniform_index(20));
              imp.labels[2] = 1;
              corpus.events.push_back(
                  {customer, {it->id, ActionType::kAddToCart, cursor}});
              if (rng.uniform() < cfg.escalate_purchase * sharpen) {
                cursor += 10 + static_cast<Timestamp>(rng.uniform_index(30));
                imp.labels[3] = 1;
                corpus.events.push_back(
                    {customer, {it->id, ActionType::kPurchase, cursor}});
              }
            }
          }
          interaction_counts[static_cast<size_t>(it->id - 1001)] += 1;
        }
        req.page.push_back(imp);
      }
      corpus.requests.push_back(std::move(req));
      corpus.truth.sessions.push_back(std::move(truth));
    }
  }

  // realized popularity ranks: interaction counts descending, id ascending
  std::vector<int> order(static_cast<size_t>(cfg.num_items));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (interaction_counts[static_cast<size_t>(a)] !=
        interaction_counts[static_cast<size_t>(b)])
      return interaction_counts[static_cast<size_t>(a)] >
             interaction_counts[static_cast<size_t>(b)];
    return a < b;
  });
  std::vector<int32_t> rank_of(static_cast<size_t>(cfg.num_items));
  for (int r = 0; r < cfg.num_items; ++r)
    rank_of[static_cast<size_t>(order[static_cast<size_t>(r)])] = r;

  corpus.catalog.reserve(items.size());
  for (int i = 0; i < cfg.num_items; ++i) {
    const ItemState& st = items[static_cast<size_t>(i)];
    Item item;
    item.item_id = st.id;
    item.brand_id = st.brand;
    item.category_id = st.category;
    item.color_id = st.color;
    item.material_id = 1 + static_cast<int32_t>(
                               Rng(cfg.seed ^ (0xabcdULL + st.id)).uniform_index(
                                   static_cast<uint64_t>(cfg.num_materials)));
    item.pattern_id = 1 + static_cast<int32_t>(
                              Rng(cfg.seed ^ (0x1234ULL + st.id)).uniform_index(
                                  static_cast<uint64_t>(cfg.num_patterns)));
    item.visual_vector.resize(static_cast<size_t>(cfg.d_pre));
    Rng vis_rng(cfg.seed ^ (0x77ULL * static_cast<uint64_t>(st.id)));
    for (int j = 0; j < cfg.d_pre; ++j) {
      double acc = 0;
      for (int d = 0; d < m; ++d)
        acc += vis_proj[static_cast<size_t>(j) * m + d] *
               st.style[static_cast<size_t>(d)];
      item.visual_vector[static_cast<size_t>(j)] = acc + 0.25 * vis_rng.normal();
    }
    item.activation_time = st.activation;
    item.popularity_rank = rank_of[static_cast<size_t>(i)];
    corpus.catalog.push_back(std::move(item));
  }

  // events arrive grouped per customer already ordered; sort globally by
  // (customer, timestamp) for a deterministic file layout
  std::stable_sort(corpus.events.begin(), corpus.events.end(),
                   [](const Event& a, const Event& b) {
                     if (a.customer_id != b.customer_id)
                       return a.customer_id < b.customer_id;
                     return a.action.timestamp < b.action.timestamp;
                   });
  return corpus;
}

CorpusFiles corpus_paths(const std::string& dir) {
  return {dir + "/catalog.jsonl", dir + "/events.jsonl",
          dir + "/requests.jsonl", dir + "/ground_truth.rkt"};
}

void write_corpus(const SyntheticCorpus& corpus, const CorpusFiles& files) {
  save_catalog_jsonl(files.catalog, corpus.catalog);
  save_events_jsonl(files.events, corpus.events);
  save_requests_jsonl(files.requests, corpus.requests);
  corpus.truth.save(files.ground_truth);
}

CorpusStats corpus_stats(const std::vector<Event>& events) {
  CorpusStats stats;
  stats.num_events = events.size();
  std::unordered_map<CustomerId, int64_t> seq_len;
  std::unordered_map<ItemId, int64_t> counts;
  for (const auto& ev : events) {
    stats.type_counts[static_cast<size_t>(ev.action.action_type)] += 1;
    seq_len[ev.customer_id] += 1;
    counts[ev.action.item_id] += 1;
  }
  stats.num_customers = seq_len.size();
  double total = 0;
  for (const auto& [customer, len] : seq_len) {
    stats.sequence_length_histogram[static_cast<size_t>(len)] += 1;
    total += static_cast<double>(len);
  }
  stats.mean_sequence_length =
      seq_len.empty() ? 0.0 : total / static_cast<double>(seq_len.size());

  stats.popularity_counts.reserve(counts.size());
  for (const auto& [id, c] : counts) stats.popularity_counts.push_back(c);
  std::sort(stats.popularity_counts.begin(), stats.popularity_counts.end(),
            std::greater<>());
  // least-squares slope of log(count) on log(rank), fitted across the bulk
  // of the distribution (the very tail is count-starved)
  size_t head = std::min<size_t>(stats.popularity_counts.size(), 1000);
  while (head > 0 && stats.popularity_counts[head - 1] <= 2) --head;
  if (head >= 10) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t r = 0; r < head; ++r) {
      double x = std::log(static_cast<double>(r + 1));
      double y = std::log(static_cast<double>(
          std::max<int64_t>(stats.popularity_counts[r], 1)));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    double n = static_cast<double>(head);
    stats.fitted_power_exponent = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
  }
  return stats;
}

CorpusStats corpus_stats_from_file(const std::string& events_path) {
  std::ifstream in(events_path);
  if (!in) throw std::runtime_error("cannot open " + events_path);
  std::vector<Event> events;
  CorpusStats partial;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      events.push_back(event_from_json(line));
    } catch (const std::exception& e) {
      partial.malformed.emplace_back(line_no, e.what());
    }
  }
  CorpusStats stats = corpus_stats(events);
  stats.malformed = std::move(partial.malformed);
  return stats;
}

}  // namespace rankstack::synth
