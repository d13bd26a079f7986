#include "rankstack/retrieval.hpp"

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

double log_uniform_prob(int rank, int num_classes) {
  return std::log((rank + 2.0) / (rank + 1.0)) / std::log(num_classes + 1.0);
}

int negative_sample_count(int num_classes, double fraction) {
  return std::max(1, static_cast<int>(std::ceil(fraction * num_classes)));
}

std::vector<int> log_uniform_sample(int num_classes, int num_samples,
                                    const std::unordered_set<int>& exclude,
                                    Rng& rng) {
  int feasible = num_classes - static_cast<int>(exclude.size());
  if (num_samples > feasible)
    throw std::invalid_argument("log_uniform_sample: infeasible request");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(num_samples));
  std::unordered_set<int> taken;
  double log_range = std::log(num_classes + 1.0);
  // inverse-CDF draw with rejection for exclusions and duplicates
  long attempts = 0, cap = 64L * std::max(num_samples, 1);
  while (static_cast<int>(out.size()) < num_samples && attempts < cap) {
    ++attempts;
    int rank =
        static_cast<int>(std::exp(rng.uniform() * log_range)) - 1;
    if (rank < 0 || rank >= num_classes) continue;
    if (exclude.count(rank) || taken.count(rank)) continue;
    taken.insert(rank);
    out.push_back(rank);
  }
  if (static_cast<int>(out.size()) < num_samples) {
    // nearly-exhausted class set: draw exactly from the remaining mass
    std::vector<int> remaining;
    std::vector<double> weight;
    for (int r = 0; r < num_classes; ++r) {
      if (exclude.count(r) || taken.count(r)) continue;
      remaining.push_back(r);
      weight.push_back(log_uniform_prob(r, num_classes));
    }
    while (static_cast<int>(out.size()) < num_samples) {
      double total = 0;
      for (double w : weight) total += w;
      double u = rng.uniform() * total;
      size_t pick = remaining.size() - 1;
      for (size_t i = 0; i < remaining.size(); ++i) {
        u -= weight[i];
        if (u <= 0) {
          pick = i;
          break;
        }
      }
      out.push_back(remaining[pick]);
      remaining.erase(remaining.begin() + static_cast<ptrdiff_t>(pick));
      weight.erase(weight.begin() + static_cast<ptrdiff_t>(pick));
    }
  }
  return out;
}

Value sampled_softmax_loss(Tape& t, Value customer_emb, Value class_rows,
                           std::span<const double> sample_probs,
                           bool logq_correction,
                           std::span<const double> extra_logit_bias) {
  const int k = t.val(class_rows).rows();
  if (static_cast<int>(sample_probs.size()) != k)
    throw std::invalid_argument(
        "sampled_softmax_loss: one sampling probability per class required");
  Value logits = t.matmul_nt(customer_emb, class_rows);
  if (logq_correction) {
    Tensor corr({k});
    for (int i = 0; i < k; ++i)
      corr[static_cast<size_t>(i)] =
          std::log(sample_probs[static_cast<size_t>(i)]);
    logits = t.sub(logits, t.input(std::move(corr)));
  }
  if (!extra_logit_bias.empty()) {
    Tensor bias({k});
    for (int i = 0; i < k; ++i)
      bias[static_cast<size_t>(i)] = extra_logit_bias[static_cast<size_t>(i)];
    logits = t.add(logits, t.input(std::move(bias)));
  }
  return t.cross_entropy_with_logits(logits, 0);
}

std::vector<RetrievalExample> build_retrieval_examples(
    const std::vector<Event>& events,
    const std::vector<RequestRecord>& requests) {
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

  std::vector<RetrievalExample> out;
  for (const auto& req : sorted) {
    RetrievalExample ex;
    ex.customer_id = req.customer_id;
    ex.global = req.global;
    ex.local = req.local;
    auto it = by_customer.find(req.customer_id);
    if (it != by_customer.end()) {
      for (const auto& a : it->second->actions)
        if (a.timestamp < req.timestamp) ex.history.push_back(a);
    }
    for (const auto& imp : req.page) {
      if (!imp.any_positive()) continue;
      ActionType strongest = ActionType::kClick;
      for (int t = kNumActionTypes - 1; t >= 0; --t) {
        if (imp.labels[static_cast<size_t>(t)]) {
          strongest = static_cast<ActionType>(t);
          break;
        }
      }
      ex.targets.push_back(
          {imp.item_id, strongest, req.timestamp + imp.position});
    }
    if (!ex.targets.empty()) out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string item_param(const char* name) { return std::string("item/") + name; }

// centered log-popularity logit bias for the frozen-tower variant
std::vector<double> popularity_bias_by_dense(const CatalogIndex& catalog) {
  int n = catalog.num_items();
  std::vector<double> bias(static_cast<size_t>(n) + 1, 0.0);
  double mean = 0;
  for (const auto& item : catalog.items())
    mean += std::log((n + 1.0) / (item.popularity_rank + 1.0));
  mean /= std::max(1, n);
  for (int d = 1; d <= n; ++d) {
    const Item& item = catalog.by_dense(d);
    bias[static_cast<size_t>(d)] =
        std::log((n + 1.0) / (item.popularity_rank + 1.0)) - mean;
  }
  return bias;
}

}  // namespace

namespace {
SequenceEncoder placeholder_encoder(const TwoTowerConfig& cfg, VocabSpec v) {
  v.num_items = 1;  // real vocab arrives with init() or load()
  return SequenceEncoder(cfg.encoder, v, ItemVocab{}, "cust/");
}
}  // namespace

TwoTowerModel::TwoTowerModel(TwoTowerConfig cfg, VocabSpec vocab,
                             std::string version)
    : cfg_(cfg),
      vocab_(vocab),
      encoder_(placeholder_encoder(cfg, vocab)),
      version_(std::move(version)) {}

void TwoTowerModel::init(const CatalogIndex& catalog, Rng& rng) {
  ItemVocab vocab_items = ItemVocab::from_catalog(catalog);
  vocab_.num_items = vocab_items.count;
  vocab_.d_pre = static_cast<int>(catalog.d_pre());
  encoder_ = SequenceEncoder(cfg_.encoder, vocab_, vocab_items, "cust/");
  encoder_.init_params(store_, rng);

  int d = cfg_.encoder.d_model;
  store_.get_or_create("cust/out/w",
                       Tensor::truncated_normal({d, cfg_.d_emb}, 0.02, rng));
  store_.get_or_create("cust/out/b", Tensor({cfg_.d_emb}));

  Tensor vis_init = Tensor::truncated_normal(
      {std::max(vocab_.d_pre, 1), cfg_.d_emb}, 0.05, rng);
  store_.get_or_create(item_param("vis_init"), vis_init);

  Tensor id_table({vocab_.num_items, cfg_.d_emb});
  for (const auto& item : catalog.items()) {
    int row = encoder_.item_vocab().lookup(item.item_id);
    for (int j = 0; j < cfg_.d_emb; ++j) {
      double acc = 0;
      for (size_t k = 0; k < item.visual_vector.size(); ++k)
        acc += item.visual_vector[k] * vis_init.at(static_cast<int>(k), j);
      id_table.at(row, j) = acc;
    }
  }
  store_.get_or_create(item_param("emb"), id_table);
  auto tn = [&](std::vector<int> shape) {
    return Tensor::truncated_normal(std::move(shape), 0.02, rng);
  };
  store_.get_or_create(item_param("brand"), tn({vocab_.num_brands, cfg_.d_emb}));
  store_.get_or_create(item_param("category"),
                       tn({vocab_.num_categories, cfg_.d_emb}));
  store_.get_or_create(item_param("color"), tn({vocab_.num_colors, cfg_.d_emb}));
  store_.get_or_create(item_param("material"),
                       tn({vocab_.num_materials, cfg_.d_emb}));
  store_.get_or_create(item_param("pattern"),
                       tn({vocab_.num_patterns, cfg_.d_emb}));
}

Value TwoTowerModel::customer_embedding_on_tape(
    Tape& t, ParameterStore& store, const CustomerSequence& seq,
    const GlobalContext& g, const LocalContext& l,
    const CatalogIndex& catalog) const {
  LocalContext l_eff = cfg_.use_local_context ? l : LocalContext{};
  std::optional<Value> summary;
  if (cfg_.use_local_context && !l_eff.page_item_ids.empty()) {
    summary = t.mean_rows(
        encoder_.embed_item_content(t, store, catalog, l_eff.page_item_ids));
  }
  auto tokens = encoder_.build_token_sequence(t, store, seq, g, l_eff, catalog,
                                              train_origin_, summary);
  Value hidden = encoder_.encode(t, store, tokens);
  Value last = encoder_.last_position_output(t, hidden);
  return t.bias_add(t.matmul(last, t.param(store, "cust/out/w")),
                    t.param(store, "cust/out/b"));
}

Value TwoTowerModel::item_rows_on_tape(Tape& t, ParameterStore& store,
                                       std::span<const int> dense_ids,
                                       const CatalogIndex& catalog) const {
  std::vector<int> rows(dense_ids.size()), brand(dense_ids.size()),
      category(dense_ids.size()), color(dense_ids.size()),
      material(dense_ids.size()), pattern(dense_ids.size());
  for (size_t i = 0; i < dense_ids.size(); ++i) {
    const Item& item = catalog.by_dense(dense_ids[i]);
    rows[i] = safe_code(encoder_.item_vocab().lookup(item.item_id),
                        vocab_.num_items);
    brand[i] = safe_code(item.brand_id, vocab_.num_brands);
    category[i] = safe_code(item.category_id, vocab_.num_categories);
    color[i] = safe_code(item.color_id, vocab_.num_colors);
    material[i] = safe_code(item.material_id, vocab_.num_materials);
    pattern[i] = safe_code(item.pattern_id, vocab_.num_patterns);
  }
  if (!cfg_.trainable_item_tower) {
    // frozen tower: constant rows, no gradient path
    Tensor rows_tensor({static_cast<int>(dense_ids.size()), cfg_.d_emb});
    for (size_t i = 0; i < dense_ids.size(); ++i)
      item_embedding_row(catalog.by_dense(dense_ids[i]),
                         rows_tensor.row_ptr(static_cast<int>(i)));
    return t.input(std::move(rows_tensor));
  }
  Value e = t.embedding(t.param(store, item_param("emb")), rows);
  e = t.add(e, t.embedding(t.param(store, item_param("brand")), brand));
  e = t.add(e, t.embedding(t.param(store, item_param("category")), category));
  e = t.add(e, t.embedding(t.param(store, item_param("color")), color));
  e = t.add(e, t.embedding(t.param(store, item_param("material")), material));
  e = t.add(e, t.embedding(t.param(store, item_param("pattern")), pattern));
  return e;
}

Value TwoTowerModel::build_example_loss(Tape& t, ParameterStore& store,
                                        const RetrievalExample& ex,
                                        const CatalogIndex& catalog,
                                        Rng& rng) const {
  int num_classes = catalog.num_items();
  int neg = negative_sample_count(num_classes, cfg_.negative_fraction);

  // history + target block as one causal sequence
  CustomerSequence seq;
  seq.customer_id = ex.customer_id;
  seq.actions = ex.history;
  seq.actions.insert(seq.actions.end(), ex.targets.begin(), ex.targets.end());
  size_t max_actions = static_cast<size_t>(cfg_.encoder.max_actions());
  size_t dropped = seq.actions.size() > max_actions
                       ? seq.actions.size() - max_actions
                       : 0;
  LocalContext l_eff = cfg_.use_local_context ? ex.local : LocalContext{};
  auto tokens = encoder_.build_token_sequence(t, store, seq, ex.global, l_eff,
                                              catalog, train_origin_,
                                              std::nullopt);
  Value hidden = encoder_.encode(t, store, tokens);

  // predictor position of target j sits one token before the target's token
  size_t hist_kept = ex.history.size() >= dropped ? ex.history.size() - dropped
                                                  : 0;
  size_t targets_kept = ex.targets.size();
  if (ex.history.size() < dropped)
    targets_kept -= (dropped - ex.history.size());
  if (targets_kept == 0) return t.sum(t.input(Tensor::scalar(0.0)));
  size_t first_target = ex.targets.size() - targets_kept;

  int ctx = cfg_.encoder.num_context_tokens;
  std::vector<int> pred_positions(targets_kept);
  for (size_t j = 0; j < targets_kept; ++j)
    pred_positions[j] = ctx + static_cast<int>(hist_kept + j) - 1;
  Value u_all = t.rows(hidden, pred_positions);
  Value u_proj = t.bias_add(t.matmul(u_all, t.param(store, "cust/out/w")),
                            t.param(store, "cust/out/b"));

  // gather all sampled class rows at once
  std::vector<int> class_dense;
  std::vector<double> class_q, class_bias;
  auto pop_bias = cfg_.popularity_logit_bias ? popularity_bias_by_dense(catalog)
                                             : std::vector<double>{};
  int k_per = 1 + neg;
  for (size_t j = 0; j < targets_kept; ++j) {
    const Item* target_item = catalog.find(ex.targets[first_target + j].item_id);
    int target_rank = target_item ? target_item->popularity_rank : 0;
    auto negs = log_uniform_sample(num_classes, neg, {target_rank}, rng);
    std::vector<int> ranks;
    ranks.push_back(target_rank);
    ranks.insert(ranks.end(), negs.begin(), negs.end());
    for (int r : ranks) {
      int dense = catalog.dense_by_popularity(r);
      class_dense.push_back(dense == 0 ? 1 : dense);
      class_q.push_back(log_uniform_prob(r, num_classes));
      if (!pop_bias.empty())
        class_bias.push_back(
            pop_bias[static_cast<size_t>(dense == 0 ? 1 : dense)]);
    }
  }
  Value class_rows = item_rows_on_tape(t, store, class_dense, catalog);

  Value total;
  for (size_t j = 0; j < targets_kept; ++j) {
    std::vector<int> slice(static_cast<size_t>(k_per));
    for (int i = 0; i < k_per; ++i)
      slice[static_cast<size_t>(i)] = static_cast<int>(j) * k_per + i;
    Value e_j = t.rows(class_rows, slice);
    size_t off = j * static_cast<size_t>(k_per);
    std::span<const double> probs(class_q.data() + off,
                                  static_cast<size_t>(k_per));
    std::span<const double> bias =
        class_bias.empty() ? std::span<const double>{}
                           : std::span<const double>(class_bias.data() + off,
                                                     static_cast<size_t>(k_per));
    Value loss_j =
        sampled_softmax_loss(t, t.row(u_proj, static_cast<int>(j)), e_j, probs,
                             cfg_.logq_correction, bias);
    total = total.valid() ? t.add(total, loss_j) : loss_j;
  }
  return t.scale(total, 1.0 / static_cast<double>(targets_kept));
}

TrainReport TwoTowerModel::train(
    const std::vector<RetrievalExample>& examples, const CatalogIndex& catalog,
    const std::function<void(int, double)>& on_epoch) {
  if (examples.empty())
    throw std::invalid_argument("train_retrieval: empty dataset");

  Timestamp origin = std::numeric_limits<Timestamp>::max();
  for (const auto& ex : examples) {
    for (const auto& a : ex.history) origin = std::min(origin, a.timestamp);
    for (const auto& a : ex.targets) origin = std::min(origin, a.timestamp);
  }
  train_origin_ = origin == std::numeric_limits<Timestamp>::max() ? 0 : origin;

  // group per customer; each epoch trains one example per customer, rotating
  std::vector<std::vector<size_t>> per_customer;
  {
    std::map<CustomerId, std::vector<size_t>> grouped;
    for (size_t i = 0; i < examples.size(); ++i)
      grouped[examples[i].customer_id].push_back(i);
    per_customer.reserve(grouped.size());
    for (auto& [id, idx] : grouped) per_customer.push_back(std::move(idx));
  }

  int threads = cfg_.num_threads > 0 ? cfg_.num_threads : default_thread_count();
  TrainReport report;
  Rng shuffle_rng(cfg_.seed);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::vector<size_t> active;
    active.reserve(per_customer.size());
    for (const auto& idx : per_customer)
      active.push_back(idx[static_cast<size_t>(epoch) % idx.size()]);
    for (size_t i = active.size(); i > 1; --i) {
      size_t j = shuffle_rng.uniform_index(i);
      std::swap(active[i - 1], active[j]);
    }

    double epoch_loss = 0;
    size_t seen = 0;
    for (size_t batch_begin = 0; batch_begin < active.size();
         batch_begin += static_cast<size_t>(cfg_.batch_size)) {
      size_t batch_end = std::min(
          active.size(), batch_begin + static_cast<size_t>(cfg_.batch_size));
      size_t batch_n = batch_end - batch_begin;

      std::vector<std::unordered_map<std::string, Tensor>> grads(
          static_cast<size_t>(threads));
      std::vector<double> losses(static_cast<size_t>(threads), 0.0);
      parallel_chunks(batch_n, threads, [&](int tid, size_t lo, size_t hi) {
        auto& local = grads[static_cast<size_t>(tid)];
        for (size_t k = lo; k < hi; ++k) {
          size_t ex_idx = active[batch_begin + k];
          Rng ex_rng(Rng::splitmix(cfg_.seed ^ (0x5bd1e995ULL * ex_idx)) ^
                     static_cast<uint64_t>(epoch));
          Tape tape;
          Value loss =
              build_example_loss(tape, store_, examples[ex_idx], catalog, ex_rng);
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
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error(
            "train_retrieval: non-finite loss at epoch " +
            std::to_string(epoch) + ", batch starting at " +
            std::to_string(batch_begin) + " of " + std::to_string(active.size()));
      }
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

Tensor TwoTowerModel::embed_customer(const CustomerSequence& seq,
                                     const GlobalContext& g,
                                     const LocalContext& l,
                                     const CatalogIndex& catalog) const {
  Tape t;
  auto& store = const_cast<ParameterStore&>(store_);
  Value u = customer_embedding_on_tape(t, store, seq, g, l, catalog);
  return t.val(u);
}

void TwoTowerModel::item_embedding_row(const Item& item, double* dst) const {
  const Tensor& id_table = store_.value(item_param("emb"));
  const Tensor& vis_init = store_.value(item_param("vis_init"));
  int row = encoder_.item_vocab().lookup(item.item_id);
  if (row != 0) {
    const double* src = id_table.row_ptr(row);
    for (int j = 0; j < cfg_.d_emb; ++j) dst[j] = src[j];
  } else {
    // unseen item: visual-projection fallback, same rule as initialization
    for (int j = 0; j < cfg_.d_emb; ++j) {
      double acc = 0;
      for (size_t k = 0; k < item.visual_vector.size(); ++k)
        acc += item.visual_vector[k] * vis_init.at(static_cast<int>(k), j);
      dst[j] = acc;
    }
  }
  auto add_row = [&](const Tensor& table, int code) {
    const double* src = table.row_ptr(code);
    for (int j = 0; j < cfg_.d_emb; ++j) dst[j] += src[j];
  };
  add_row(store_.value(item_param("brand")),
          safe_code(item.brand_id, vocab_.num_brands));
  add_row(store_.value(item_param("category")),
          safe_code(item.category_id, vocab_.num_categories));
  add_row(store_.value(item_param("color")),
          safe_code(item.color_id, vocab_.num_colors));
  add_row(store_.value(item_param("material")),
          safe_code(item.material_id, vocab_.num_materials));
  add_row(store_.value(item_param("pattern")),
          safe_code(item.pattern_id, vocab_.num_patterns));
}

Tensor TwoTowerModel::all_item_embeddings(const CatalogIndex& catalog) const {
  int n = catalog.num_items();
  Tensor out({n, cfg_.d_emb});
  for (int d = 1; d <= n; ++d)
    item_embedding_row(catalog.by_dense(d), out.row_ptr(d - 1));
  return out;
}

nn::Tensor TwoTowerModel::metadata_embeddings(const CatalogIndex& catalog) const {
  int n = catalog.num_items();
  Tensor out({n, cfg_.d_emb});
  for (int d = 1; d <= n; ++d) {
    const Item& item = catalog.by_dense(d);
    double* dst = out.row_ptr(d - 1);
    auto add_row = [&](const Tensor& table, int code) {
      const double* src = table.row_ptr(code);
      for (int j = 0; j < cfg_.d_emb; ++j) dst[j] += src[j];
    };
    add_row(store_.value(item_param("brand")),
            safe_code(item.brand_id, vocab_.num_brands));
    add_row(store_.value(item_param("category")),
            safe_code(item.category_id, vocab_.num_categories));
    add_row(store_.value(item_param("color")),
            safe_code(item.color_id, vocab_.num_colors));
    add_row(store_.value(item_param("material")),
            safe_code(item.material_id, vocab_.num_materials));
    add_row(store_.value(item_param("pattern")),
            safe_code(item.pattern_id, vocab_.num_patterns));
  }
  return out;
}

EmbeddingSet TwoTowerModel::export_item_embeddings(
    const CatalogIndex& catalog) const {
  Tensor all = all_item_embeddings(catalog);
  EmbeddingSet set;
  set.model_version = version_;
  set.d_emb = cfg_.d_emb;
  set.ids.reserve(static_cast<size_t>(catalog.num_items()));
  set.data.reserve(static_cast<size_t>(catalog.num_items()) *
                   static_cast<size_t>(cfg_.d_emb));
  for (int d = 1; d <= catalog.num_items(); ++d) {
    set.ids.push_back(catalog.by_dense(d).item_id);
    const double* src = all.row_ptr(d - 1);
    for (int j = 0; j < cfg_.d_emb; ++j)
      set.data.push_back(static_cast<float>(src[j]));
  }
  return set;
}

std::vector<double> TwoTowerModel::score_catalog(
    const CustomerSequence& seq, const GlobalContext& g, const LocalContext& l,
    const CatalogIndex& catalog) const {
  Tensor u = embed_customer(seq, g, l, catalog);
  Tensor items = all_item_embeddings(catalog);
  std::vector<double> scores(static_cast<size_t>(catalog.num_items()));
  for (int i = 0; i < catalog.num_items(); ++i)
    scores[static_cast<size_t>(i)] =
        nn::dot(u.data(), items.row_ptr(i), cfg_.d_emb);
  return scores;
}

// --- persistence ---------------------------------------------------------------

void TwoTowerModel::save(const std::string& checkpoint_path,
                         const std::string& meta_path) const {
  store_.save_checkpoint(checkpoint_path);
  nlohmann::json j;
  j["model_version"] = version_;
  j["train_origin"] = train_origin_;
  j["d_emb"] = cfg_.d_emb;
  j["trainable_item_tower"] = cfg_.trainable_item_tower;
  j["use_local_context"] = cfg_.use_local_context;
  j["logq_correction"] = cfg_.logq_correction;
  j["popularity_logit_bias"] = cfg_.popularity_logit_bias;
  j["negative_fraction"] = cfg_.negative_fraction;
  j["encoder"] = {
      {"num_layers", cfg_.encoder.num_layers},
      {"num_heads", cfg_.encoder.num_heads},
      {"d_model", cfg_.encoder.d_model},
      {"max_seq_len", cfg_.encoder.max_seq_len},
      {"activation", cfg_.encoder.activation == nn::Activation::kGelu
                         ? "gelu"
                         : "relu"},
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

TwoTowerModel TwoTowerModel::load(const std::string& checkpoint_path,
                                  const std::string& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw std::runtime_error("cannot open model meta " + meta_path);
  nlohmann::json j;
  in >> j;

  TwoTowerConfig cfg;
  cfg.d_emb = j.at("d_emb").get<int>();
  cfg.trainable_item_tower = j.at("trainable_item_tower").get<bool>();
  cfg.use_local_context = j.at("use_local_context").get<bool>();
  cfg.logq_correction = j.at("logq_correction").get<bool>();
  cfg.popularity_logit_bias = j.at("popularity_logit_bias").get<bool>();
  cfg.negative_fraction = j.at("negative_fraction").get<double>();
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

  TwoTowerModel model(cfg, vocab, j.at("model_version").get<std::string>());
  ItemVocab items;
  for (const auto& [key, val] : j.at("item_rows").items())
    items.rows[std::stoll(key)] = val.get<int>();
  items.count = vocab.num_items;
  model.encoder_ = SequenceEncoder(cfg.encoder, vocab, items, "cust/");
  model.store_ = nn::ParameterStore::load_checkpoint(checkpoint_path);
  model.train_origin_ = j.at("train_origin").get<Timestamp>();
  return model;
}

}  // namespace rankstack
