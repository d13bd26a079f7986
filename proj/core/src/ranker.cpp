#include "rankstack/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "rankstack/parallel.hpp"

namespace rankstack {

using nn::ParameterStore;
using nn::Tape;
using nn::Tensor;
using nn::Value;

void HeadWeights::validate() const {
  bool any_positive = false;
  for (double x : w) {
    if (x < 0) throw std::invalid_argument("head weights must be non-negative");
    if (x > 0) any_positive = true;
  }
  if (!any_positive)
    throw std::invalid_argument("at least one head weight must be positive");
}

double blend(const std::map<ActionType, double>& head_probs,
             const HeadWeights& weights) {
  weights.validate();
  double s = 0;
  for (const auto& [type, p] : head_probs) s += weights[type] * p;
  return s;
}

Value multi_task_loss(Tape& t, Value probs, const Tensor& labels) {
  const Tensor& pv = t.val(probs);
  if (!pv.same_shape(labels))
    throw std::invalid_argument("multi_task_loss: probs/labels shape mismatch");
  int n = pv.rows();
  constexpr double kClamp = 1e-7;
  Value p = t.clamp(probs, kClamp, 1.0 - kClamp);
  Value y = t.input(labels);
  Value pos_term = t.mul(y, t.log(p));
  Value neg_term = t.mul(t.rsub_scalar(1.0, y), t.log(t.rsub_scalar(1.0, p)));
  return t.scale(t.sum(t.add(pos_term, neg_term)), -1.0 / std::max(1, n));
}

std::vector<RankingExample> build_ranking_examples(
    const std::vector<Event>& events,
    const std::vector<RequestRecord>& requests, int neg_ratio, uint64_t seed) {
  auto sequences = group_events(events);
  std::unordered_map<CustomerId, const CustomerSequence*> by_customer;
  for (const auto& s : sequences) by_customer[s.customer_id] = &s;

  std::vector<RequestRecord> sorted = requests;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RequestRecord& a, const RequestRecord& b) {
                     return a.customer_id != b.customer_id
                                ? a.customer_id < b.customer_id
                                : a.timestamp < b.timestamp;
                   });

  std::vector<RankingExample> out;
  for (size_t r = 0; r < sorted.size(); ++r) {
    const auto& req = sorted[r];
    std::vector<const PageImpression*> positives, negatives;
    for (const auto& imp : req.page)
      (imp.any_positive() ? positives : negatives).push_back(&imp);
    if (positives.empty()) continue;

    RankingExample ex;
    ex.global = req.global;
    ex.local = req.local;
    ex.history.customer_id = req.customer_id;
    auto it = by_customer.find(req.customer_id);
    if (it != by_customer.end()) {
      for (const auto& a : it->second->actions)
        if (a.timestamp < req.timestamp) ex.history.actions.push_back(a);
    }

    size_t want = positives.size() * static_cast<size_t>(neg_ratio);
    Rng rng(Rng::splitmix(seed ^ (r * 0x9e3779b97f4a7c15ULL)));
    // partial Fisher-Yates over the negative pool
    std::vector<const PageImpression*> pool = negatives;
    size_t take = std::min(want, pool.size());
    for (size_t i = 0; i < take; ++i) {
      size_t j = i + rng.uniform_index(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(take);

    auto push = [&ex](const PageImpression& imp) {
      ex.candidates.push_back(imp.item_id);
      ex.labels.push_back(imp.labels);
      ex.positions.push_back(imp.position);
    };
    for (const auto* imp : positives) push(*imp);
    for (const auto* imp : pool) push(*imp);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------

RankerModel::RankerModel(RankerConfig cfg, VocabSpec vocab, std::string version)
    : cfg_(cfg),
      vocab_([&] {
        VocabSpec v = vocab;
        v.num_items = 1;
        return v;
      }()),
      encoder_(cfg.encoder, vocab_, ItemVocab{}, "rank/"),
      version_(std::move(version)) {}

void RankerModel::init(const CatalogIndex& catalog, Rng& rng) {
  ItemVocab items = ItemVocab::from_catalog(catalog);
  vocab_.num_items = items.count;
  vocab_.d_pre = static_cast<int>(catalog.d_pre());
  encoder_ = SequenceEncoder(cfg_.encoder, vocab_, items, "rank/");
  encoder_.init_params(store_, rng);

  int d = cfg_.encoder.d_model;
  auto tn = [&](std::vector<int> shape) {
    return Tensor::truncated_normal(std::move(shape), 0.02, rng);
  };
  // fan-in-scaled head initialization: the bilinear dot between two freshly
  // initialized FFN outputs otherwise starts too small to bootstrap within
  // the two-epoch training budget
  auto head_init = [&](std::vector<int> shape) {
    double std = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    return Tensor::truncated_normal(std::move(shape), std, rng);
  };
  for (int h = 0; h < kNumActionTypes; ++h) {
    std::string hp = "rank/head" + std::to_string(h);
    for (const char* side : {"/cust", "/item"}) {
      store_.get_or_create(hp + side + "/w1", head_init({d, cfg_.head_hidden}));
      store_.get_or_create(hp + side + "/b1", Tensor({cfg_.head_hidden}));
      store_.get_or_create(hp + side + "/w2",
                           head_init({cfg_.head_hidden, d}));
      store_.get_or_create(hp + side + "/b2", Tensor({d}));
    }
  }
  // items enter the heads layer-normalized so both sides of the dot start
  // at comparable scale
  store_.get_or_create("rank/item_ln/g", Tensor::full({d}, 1.0));
  store_.get_or_create("rank/item_ln/b", Tensor({d}));
  if (cfg_.position_branch) {
    store_.get_or_create("rank/pos/w1", head_init({1, cfg_.pos_hidden}));
    store_.get_or_create("rank/pos/b1", Tensor({cfg_.pos_hidden}));
    store_.get_or_create("rank/pos/w2", head_init({cfg_.pos_hidden, 1}));
    store_.get_or_create("rank/pos/b2", Tensor({1}));
  }
  (void)tn;
}

Value RankerModel::head_ffn(Tape& t, ParameterStore& store, Value x,
                            const std::string& prefix) const {
  Value h = t.relu(t.bias_add(t.matmul(x, t.param(store, prefix + "/w1")),
                              t.param(store, prefix + "/b1")));
  return t.bias_add(t.matmul(h, t.param(store, prefix + "/w2")),
                    t.param(store, prefix + "/b2"));
}

Value RankerModel::position_offset(
    Tape& t, ParameterStore& store,
    std::span<const double> normalized_positions) const {
  Tensor pos({static_cast<int>(normalized_positions.size()), 1});
  for (size_t i = 0; i < normalized_positions.size(); ++i)
    pos.at(static_cast<int>(i), 0) = normalized_positions[i];
  Value h =
      t.relu(t.bias_add(t.matmul(t.input(std::move(pos)),
                                 t.param(store, "rank/pos/w1")),
                        t.param(store, "rank/pos/b1")));
  return t.bias_add(t.matmul(h, t.param(store, "rank/pos/w2")),
                    t.param(store, "rank/pos/b2"));
}

Value RankerModel::probs_on_tape(Tape& t, ParameterStore& store,
                                 const RankingExample& ex,
                                 const CatalogIndex& catalog,
                                 bool use_observed_positions) const {
  if (ex.candidates.empty())
    throw std::invalid_argument("score_candidates: no candidates");
  Value raw_items =
      encoder_.embed_item_content(t, store, catalog, ex.candidates);
  Value summary = t.mean_rows(raw_items);
  Value items = t.layer_norm(raw_items, t.param(store, "rank/item_ln/g"),
                             t.param(store, "rank/item_ln/b"));
  auto tokens = encoder_.build_token_sequence(t, store, ex.history, ex.global,
                                              ex.local, catalog, train_origin_,
                                              summary);
  Value hidden = encoder_.encode(t, store, tokens);
  Value u = encoder_.last_position_output(t, hidden);

  std::optional<Value> pos_logit;
  if (cfg_.position_branch) {
    std::vector<double> norm(ex.candidates.size(), cfg_.serve_position / 100.0);
    if (use_observed_positions) {
      if (ex.positions.size() != ex.candidates.size())
        throw std::invalid_argument("observed positions must match candidates");
      for (size_t i = 0; i < norm.size(); ++i)
        norm[i] = static_cast<double>(ex.positions[i]) / 100.0;
    }
    pos_logit = position_offset(t, store, norm);
  }

  std::vector<Value> head_probs;
  head_probs.reserve(kNumActionTypes);
  for (int h = 0; h < kNumActionTypes; ++h) {
    std::string hp = "rank/head" + std::to_string(h);
    Value uc = head_ffn(t, store, u, hp + "/cust");
    Value vi = head_ffn(t, store, items, hp + "/item");
    // logits as a column: [K x d] * [1 x d]^T
    Value logits = t.matmul_nt(vi, t.vstack({uc}));
    if (pos_logit) logits = t.add(logits, *pos_logit);
    head_probs.push_back(t.sigmoid(logits));
  }
  return t.concat(head_probs);  // [K x H]
}

std::vector<ScoredItem> RankerModel::score_candidates(
    const CustomerSequence& seq, const GlobalContext& g, const LocalContext& l,
    std::span<const ItemId> candidates, const CatalogIndex& catalog,
    std::optional<std::span<const int>> observed_positions) const {
  RankingExample ex;
  ex.history = seq;
  ex.global = g;
  ex.local = l;
  ex.candidates.assign(candidates.begin(), candidates.end());
  if (observed_positions)
    ex.positions.assign(observed_positions->begin(), observed_positions->end());
  Tape t;
  auto& store = const_cast<ParameterStore&>(store_);
  Value probs = probs_on_tape(t, store, ex, catalog,
                              observed_positions.has_value());
  const Tensor& pv = t.val(probs);
  std::vector<ScoredItem> out(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    out[i].item_id = candidates[i];
    for (int h = 0; h < kNumActionTypes; ++h)
      out[i].head_probabilities[static_cast<ActionType>(h)] =
          pv.at(static_cast<int>(i), h);
  }
  return out;
}

RankerItemCache RankerModel::build_item_cache(const CatalogIndex& catalog) const {
  RankerItemCache cache;
  cache.d_model = cfg_.encoder.d_model;
  cache.num_heads = kNumActionTypes;
  int n = catalog.num_items();
  std::vector<ItemId> ids;
  ids.reserve(static_cast<size_t>(n));
  for (int d = 1; d <= n; ++d) ids.push_back(catalog.by_dense(d).item_id);

  Tape t;
  auto& store = const_cast<ParameterStore&>(store_);
  Value content = encoder_.embed_item_content(t, store, catalog, ids);
  const Tensor& cv = t.val(content);
  cache.content.resize(cv.numel());
  for (size_t i = 0; i < cv.numel(); ++i)
    cache.content[i] = static_cast<float>(cv[i]);
  Value normed = t.layer_norm(content, t.param(store, "rank/item_ln/g"),
                              t.param(store, "rank/item_ln/b"));
  cache.head_item.resize(static_cast<size_t>(kNumActionTypes) * cv.numel());
  for (int h = 0; h < kNumActionTypes; ++h) {
    std::string hp = "rank/head" + std::to_string(h) + "/item";
    Value vi = head_ffn(t, store, normed, hp);
    const Tensor& vv = t.val(vi);
    float* dst = cache.head_item.data() + static_cast<size_t>(h) * cv.numel();
    for (size_t i = 0; i < vv.numel(); ++i) dst[i] = static_cast<float>(vv[i]);
  }
  for (int i = 0; i < n; ++i) cache.row_of[ids[static_cast<size_t>(i)]] = i;
  return cache;
}

std::vector<ScoredItem> RankerModel::score_with_cache(
    const CustomerSequence& seq, const GlobalContext& g, const LocalContext& l,
    std::span<const ItemId> candidates, const CatalogIndex& catalog,
    const RankerItemCache& cache) const {
  if (candidates.empty()) return {};
  int d = cfg_.encoder.d_model;
  // summary token from cached f32 content rows
  Tensor summary({1, d});
  int found = 0;
  for (ItemId id : candidates) {
    auto it = cache.row_of.find(id);
    if (it == cache.row_of.end()) continue;
    const float* row = cache.content_row(it->second);
    for (int j = 0; j < d; ++j) summary.at(0, j) += row[j];
    ++found;
  }
  if (found > 0) summary.scale_inplace(1.0 / found);

  Tape t;
  auto& store = const_cast<ParameterStore&>(store_);
  auto tokens = encoder_.build_token_sequence(
      t, store, seq, g, l, catalog, train_origin_, t.input(std::move(summary)));
  Value u = encoder_.last_position_output(
      t, encoder_.encode(t, store, tokens));
  double pos_offset = 0.0;
  if (cfg_.position_branch) {
    std::vector<double> p0 = {cfg_.serve_position / 100.0};
    pos_offset = t.val(position_offset(t, store, p0))[0];
  }
  std::vector<const double*> uc(kNumActionTypes);
  std::vector<Value> uc_vals;
  uc_vals.reserve(kNumActionTypes);
  for (int h = 0; h < kNumActionTypes; ++h) {
    std::string hp = "rank/head" + std::to_string(h) + "/cust";
    uc_vals.push_back(head_ffn(t, store, u, hp));
    uc[static_cast<size_t>(h)] = t.val(uc_vals.back()).data();
  }

  std::vector<ScoredItem> out(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    out[i].item_id = candidates[i];
    auto it = cache.row_of.find(candidates[i]);
    for (int h = 0; h < kNumActionTypes; ++h) {
      double logit = pos_offset;
      if (it != cache.row_of.end()) {
        const float* row = cache.head_row(h, it->second);
        const double* c = uc[static_cast<size_t>(h)];
        double dot = 0;
        for (int j = 0; j < d; ++j) dot += c[j] * row[j];
        logit += dot;
      }
      double prob = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit))
                               : std::exp(logit) / (1.0 + std::exp(logit));
      out[i].head_probabilities[static_cast<ActionType>(h)] = prob;
    }
  }
  return out;
}

Value RankerModel::build_example_loss(Tape& t, ParameterStore& store,
                                      const RankingExample& ex,
                                      const CatalogIndex& catalog) const {
  Value probs = probs_on_tape(t, store, ex, catalog,
                              /*use_observed_positions=*/true);
  Tensor labels({static_cast<int>(ex.candidates.size()), kNumActionTypes});
  for (size_t i = 0; i < ex.labels.size(); ++i)
    for (int h = 0; h < kNumActionTypes; ++h)
      labels.at(static_cast<int>(i), h) = ex.labels[i][static_cast<size_t>(h)];
  return multi_task_loss(t, probs, labels);
}

TrainReport RankerModel::train(
    const std::vector<RankingExample>& examples, const CatalogIndex& catalog,
    const std::function<void(int, double)>& on_epoch) {
  std::vector<size_t> order;
  for (size_t i = 0; i < examples.size(); ++i)
    if (!examples[i].candidates.empty()) order.push_back(i);
  if (order.empty())
    throw std::invalid_argument("train_ranker: dataset has no positives");
  Rng pick_rng(cfg_.seed);
  if (order.size() > cfg_.max_examples) {
    for (size_t i = 0; i < cfg_.max_examples; ++i) {
      size_t j = i + pick_rng.uniform_index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    order.resize(cfg_.max_examples);
  }

  Timestamp origin = std::numeric_limits<Timestamp>::max();
  for (size_t i : order)
    for (const auto& a : examples[i].history.actions)
      origin = std::min(origin, a.timestamp);
  train_origin_ = origin == std::numeric_limits<Timestamp>::max() ? 0 : origin;

  int threads = cfg_.num_threads > 0 ? cfg_.num_threads : default_thread_count();
  TrainReport report;
  Rng shuffle_rng(cfg_.seed + 101);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<size_t> active = order;
    for (size_t i = active.size(); i > 1; --i) {
      size_t j = shuffle_rng.uniform_index(i);
      std::swap(active[i - 1], active[j]);
    }
    double epoch_loss = 0;
    size_t seen = 0;
    for (size_t begin = 0; begin < active.size();
         begin += static_cast<size_t>(cfg_.batch_size)) {
      size_t end = std::min(active.size(),
                            begin + static_cast<size_t>(cfg_.batch_size));
      size_t batch_n = end - begin;
      std::vector<std::unordered_map<std::string, Tensor>> grads(
          static_cast<size_t>(threads));
      std::vector<double> losses(static_cast<size_t>(threads), 0.0);
      parallel_chunks(batch_n, threads, [&](int tid, size_t lo, size_t hi) {
        auto& local = grads[static_cast<size_t>(tid)];
        for (size_t k = lo; k < hi; ++k) {
          Tape tape;
          Value loss = build_example_loss(tape, store_,
                                          examples[active[begin + k]], catalog);
          losses[static_cast<size_t>(tid)] += tape.val(loss)[0];
          tape.backward(loss);
          tape.for_each_param_grad(
              [&local](const std::string& name, const Tensor& g) {
                auto it = local.find(name);
                if (it == local.end())
                  local.emplace(name, g);
                else
                  it->second.add_inplace(g);
              });
        }
      });
      double batch_loss = 0;
      for (int tid = 0; tid < threads; ++tid) {
        batch_loss += losses[static_cast<size_t>(tid)];
        for (auto& [name, g] : grads[static_cast<size_t>(tid)]) {
          g.scale_inplace(1.0 / static_cast<double>(batch_n));
          store_.accumulate_grad(name, g);
        }
      }
      batch_loss /= static_cast<double>(batch_n);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train_ranker: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(begin / cfg_.batch_size));
      store_.adam_step(cfg_.lr);
      ++report.adam_steps;
      epoch_loss += batch_loss * static_cast<double>(batch_n);
      seen += batch_n;
    }
    epoch_loss /= static_cast<double>(seen);
    report.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return report;
}

void RankerModel::save(const std::string& checkpoint_path,
                       const std::string& meta_path) const {
  store_.save_checkpoint(checkpoint_path);
  nlohmann::json j;
  j["model_version"] = version_;
  j["train_origin"] = train_origin_;
  j["position_branch"] = cfg_.position_branch;
  j["head_hidden"] = cfg_.head_hidden;
  j["pos_hidden"] = cfg_.pos_hidden;
  j["serve_position"] = cfg_.serve_position;
  j["encoder"] = {
      {"num_layers", cfg_.encoder.num_layers},
      {"num_heads", cfg_.encoder.num_heads},
      {"d_model", cfg_.encoder.d_model},
      {"max_seq_len", cfg_.encoder.max_seq_len},
      {"activation",
       cfg_.encoder.activation == nn::Activation::kGelu ? "gelu" : "relu"},
      {"num_context_tokens", cfg_.encoder.num_context_tokens},
      {"ffn_hidden", cfg_.encoder.ffn_hidden},
      {"average_local_fusion", cfg_.encoder.average_local_fusion},
  };
  j["vocab"] = {
      {"num_items", vocab_.num_items},
      {"num_brands", vocab_.num_brands},
      {"num_categories", vocab_.num_categories},
      {"num_colors", vocab_.num_colors},
      {"num_materials", vocab_.num_materials},
      {"num_patterns", vocab_.num_patterns},
      {"num_countries", vocab_.num_countries},
      {"num_devices", vocab_.num_devices},
      {"num_queries", vocab_.num_queries},
      {"d_pre", vocab_.d_pre},
  };
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [id, row] : encoder_.item_vocab().rows)
    rows[std::to_string(id)] = row;
  j["item_rows"] = std::move(rows);
  std::ofstream out(meta_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model meta " + meta_path);
  out << j.dump(2) << '\n';
}

RankerModel RankerModel::load(const std::string& checkpoint_path,
                              const std::string& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw std::runtime_error("cannot open model meta " + meta_path);
  nlohmann::json j;
  in >> j;
  RankerConfig cfg;
  cfg.position_branch = j.at("position_branch").get<bool>();
  cfg.head_hidden = j.at("head_hidden").get<int>();
  cfg.pos_hidden = j.at("pos_hidden").get<int>();
  cfg.serve_position = j.at("serve_position").get<double>();
  const auto& e = j.at("encoder");
  cfg.encoder.num_layers = e.at("num_layers").get<int>();
  cfg.encoder.num_heads = e.at("num_heads").get<int>();
  cfg.encoder.d_model = e.at("d_model").get<int>();
  cfg.encoder.max_seq_len = e.at("max_seq_len").get<int>();
  cfg.encoder.activation = e.at("activation").get<std::string>() == "gelu"
                               ? nn::Activation::kGelu
                               : nn::Activation::kRelu;
  cfg.encoder.num_context_tokens = e.at("num_context_tokens").get<int>();
  cfg.encoder.ffn_hidden = e.at("ffn_hidden").get<int>();
  cfg.encoder.average_local_fusion = e.at("average_local_fusion").get<bool>();

  VocabSpec vocab;
  const auto& v = j.at("vocab");
  vocab.num_items = v.at("num_items").get<int>();
  vocab.num_brands = v.at("num_brands").get<int>();
  vocab.num_categories = v.at("num_categories").get<int>();
  vocab.num_colors = v.at("num_colors").get<int>();
  vocab.num_materials = v.at("num_materials").get<int>();
  vocab.num_patterns = v.at("num_patterns").get<int>();
  vocab.num_countries = v.at("num_countries").get<int>();
  vocab.num_devices = v.at("num_devices").get<int>();
  vocab.num_queries = v.at("num_queries").get<int>();
  vocab.d_pre = v.at("d_pre").get<int>();

  RankerModel model(cfg, vocab, j.at("model_version").get<std::string>());
  ItemVocab items;
  for (const auto& [key, val] : j.at("item_rows").items())
    items.rows[std::stoll(key)] = val.get<int>();
  items.count = vocab.num_items;
  model.vocab_ = vocab;
  model.encoder_ = SequenceEncoder(cfg.encoder, vocab, items, "rank/");
  model.store_ = nn::ParameterStore::load_checkpoint(checkpoint_path);
  model.train_origin_ = j.at("train_origin").get<Timestamp>();
  return model;
}

}  // namespace rankstack
