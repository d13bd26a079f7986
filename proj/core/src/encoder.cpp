#include "rankstack/encoder.hpp"

#include <bit>
#include <stdexcept>

namespace rankstack {

using nn::Tape;
using nn::Tensor;
using nn::Value;

void EncoderConfig::validate() const {
  if (d_model % num_heads != 0)
    throw std::invalid_argument("d_model must be divisible by num_heads");
  if (max_seq_len < num_context_tokens + 1)
    throw std::invalid_argument("max_seq_len must exceed num_context_tokens");
}

EncoderConfig EncoderConfig::retrieval_default() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 4;
  cfg.d_model = 48;
  cfg.activation = nn::Activation::kGelu;
  cfg.num_context_tokens = 3;
  cfg.max_seq_len = 100 + cfg.num_context_tokens;
  return cfg;
}

EncoderConfig EncoderConfig::ranker_default() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 8;
  cfg.d_model = 128;
  cfg.activation = nn::Activation::kRelu;
  cfg.num_context_tokens = 3;
  cfg.max_seq_len = 80 + cfg.num_context_tokens;
  return cfg;
}

SequenceEncoder::SequenceEncoder(EncoderConfig cfg, VocabSpec vocab,
                                 ItemVocab item_vocab, std::string prefix)
    : cfg_(cfg),
      vocab_(vocab),
      item_vocab_(std::move(item_vocab)),
      prefix_(std::move(prefix)) {
  cfg_.validate();
  if (vocab_.num_items != item_vocab_.count)
    throw std::invalid_argument("item vocab size disagrees with VocabSpec");
}

int SequenceEncoder::timestamp_bucket(Timestamp ts, Timestamp train_origin) {
  if (ts < train_origin) return 0;
  uint64_t delta = static_cast<uint64_t>(ts - train_origin);
  int bucket = std::bit_width(delta + 1) - 1;  // floor(log2(1 + delta))
  return std::min(bucket, kNumTimestampBuckets - 1);
}

void SequenceEncoder::init_params(nn::ParameterStore& store, Rng& rng) const {
  auto tn = [&](std::vector<int> shape) {
    return Tensor::truncated_normal(std::move(shape), 0.02, rng);
  };
  int d = cfg_.d_model;
  store.get_or_create(p("emb/item"), tn({vocab_.num_items, kIdWidth}));
  store.get_or_create(p("emb/brand"), tn({vocab_.num_brands, kMetaWidth}));
  store.get_or_create(p("emb/category"), tn({vocab_.num_categories, kMetaWidth}));
  store.get_or_create(p("emb/color"), tn({vocab_.num_colors, kMetaWidth}));
  store.get_or_create(p("emb/material"), tn({vocab_.num_materials, kMetaWidth}));
  store.get_or_create(p("emb/pattern"), tn({vocab_.num_patterns, kMetaWidth}));
  store.get_or_create(p("emb/action_type"),
                      tn({kNumActionTypes, kActionTypeWidth}));
  store.get_or_create(p("emb/ts_bucket"),
                      tn({kNumTimestampBuckets, kTimestampWidth}));
  store.get_or_create(p("emb/country"), tn({vocab_.num_countries, kMetaWidth}));
  store.get_or_create(p("emb/device"), tn({vocab_.num_devices, kMetaWidth}));
  store.get_or_create(p("emb/search_flag"), tn({2, kMetaWidth}));
  store.get_or_create(p("emb/query"), tn({vocab_.num_queries, kMetaWidth}));
  store.get_or_create(p("proj/visual"), tn({std::max(vocab_.d_pre, 1), kVisualWidth}));

  int action_in = kContentWidth + kActionTypeWidth + kTimestampWidth;
  store.get_or_create(p("proj/action/w"), tn({action_in, d}));
  store.get_or_create(p("proj/action/b"), Tensor({d}));
  store.get_or_create(p("proj/item_token/w"), tn({kContentWidth, d}));
  store.get_or_create(p("proj/item_token/b"), Tensor({d}));
  store.get_or_create(p("proj/ctx_global/w"), tn({2 * kMetaWidth, d}));
  store.get_or_create(p("proj/ctx_global/b"), Tensor({d}));
  store.get_or_create(p("proj/ctx_local/w"), tn({3 * kMetaWidth, d}));
  store.get_or_create(p("proj/ctx_local/b"), Tensor({d}));
  if (!cfg_.average_local_fusion) {
    store.get_or_create(p("proj/local_fuse/w"), tn({2 * d, d}));
    store.get_or_create(p("proj/local_fuse/b"), Tensor({d}));
  }

  for (int layer = 0; layer < cfg_.num_layers; ++layer) {
    std::string lp = prefix_ + "L" + std::to_string(layer) + "/";
    for (const char* w : {"attn/wq", "attn/wk", "attn/wv", "attn/wo"})
      store.get_or_create(lp + w, tn({d, d}));
    for (const char* b : {"attn/bq", "attn/bk", "attn/bv", "attn/bo"})
      store.get_or_create(lp + b, Tensor({d}));
    store.get_or_create(lp + "ln1/g", Tensor::full({d}, 1.0));
    store.get_or_create(lp + "ln1/b", Tensor({d}));
    store.get_or_create(lp + "ln2/g", Tensor::full({d}, 1.0));
    store.get_or_create(lp + "ln2/b", Tensor({d}));
    store.get_or_create(lp + "ffn/w1", tn({d, cfg_.ffn_width()}));
    store.get_or_create(lp + "ffn/b1", Tensor({cfg_.ffn_width()}));
    store.get_or_create(lp + "ffn/w2", tn({cfg_.ffn_width(), d}));
    store.get_or_create(lp + "ffn/b2", Tensor({d}));
  }
  store.get_or_create(p("ln_f/g"), Tensor::full({d}, 1.0));
  store.get_or_create(p("ln_f/b"), Tensor({d}));
}

Value SequenceEncoder::embed_actions(Tape& t, nn::ParameterStore& store,
                                     std::span<const Action> actions,
                                     const CatalogIndex& catalog,
                                     Timestamp train_origin) const {
  int n = static_cast<int>(actions.size());
  std::vector<int> item_ids(actions.size()), brand(actions.size()),
      category(actions.size()), color(actions.size()),
      material(actions.size()), pattern(actions.size()),
      atype(actions.size()), bucket(actions.size());
  Tensor visual({n, std::max(vocab_.d_pre, 1)});
  for (size_t i = 0; i < actions.size(); ++i) {
    const Item* item = catalog.find(actions[i].item_id);
    item_ids[i] = safe_code(item_vocab_.lookup(actions[i].item_id),
                            vocab_.num_items);
    brand[i] = item ? safe_code(item->brand_id, vocab_.num_brands) : 0;
    category[i] = item ? safe_code(item->category_id, vocab_.num_categories) : 0;
    color[i] = item ? safe_code(item->color_id, vocab_.num_colors) : 0;
    material[i] = item ? safe_code(item->material_id, vocab_.num_materials) : 0;
    pattern[i] = item ? safe_code(item->pattern_id, vocab_.num_patterns) : 0;
    atype[i] = static_cast<int>(actions[i].action_type);
    bucket[i] = timestamp_bucket(actions[i].timestamp, train_origin);
    if (item) {
      for (size_t j = 0; j < item->visual_vector.size(); ++j)
        visual.at(static_cast<int>(i), static_cast<int>(j)) =
            item->visual_vector[j];
    }
  }
  Value content = t.concat(
      {t.embedding(t.param(store, p("emb/item")), item_ids),
       t.embedding(t.param(store, p("emb/brand")), brand),
       t.embedding(t.param(store, p("emb/category")), category),
       t.embedding(t.param(store, p("emb/color")), color),
       t.embedding(t.param(store, p("emb/material")), material),
       t.embedding(t.param(store, p("emb/pattern")), pattern),
       t.matmul(t.input(std::move(visual)), t.param(store, p("proj/visual"))),
       t.embedding(t.param(store, p("emb/action_type")), atype),
       t.embedding(t.param(store, p("emb/ts_bucket")), bucket)});
  return t.bias_add(t.matmul(content, t.param(store, p("proj/action/w"))),
                    t.param(store, p("proj/action/b")));
}

Value SequenceEncoder::embed_action(Tape& t, nn::ParameterStore& store,
                                    const Action& action, const Item* item,
                                    Timestamp train_origin) const {
  // single-action convenience over the batched path
  CatalogIndex scratch(item ? std::vector<Item>{*item} : std::vector<Item>{});
  Value m = embed_actions(t, store, std::span<const Action>(&action, 1),
                          scratch, train_origin);
  return t.row(m, 0);
}

Value SequenceEncoder::embed_item_content(Tape& t, nn::ParameterStore& store,
                                          const CatalogIndex& catalog,
                                          std::span<const ItemId> ids) const {
  int n = static_cast<int>(ids.size());
  std::vector<int> item_ids(ids.size()), brand(ids.size()), category(ids.size()),
      color(ids.size()), material(ids.size()), pattern(ids.size());
  Tensor visual({n, std::max(vocab_.d_pre, 1)});
  for (size_t i = 0; i < ids.size(); ++i) {
    const Item* item = catalog.find(ids[i]);
    item_ids[i] = safe_code(item_vocab_.lookup(ids[i]), vocab_.num_items);
    brand[i] = item ? safe_code(item->brand_id, vocab_.num_brands) : 0;
    category[i] = item ? safe_code(item->category_id, vocab_.num_categories) : 0;
    color[i] = item ? safe_code(item->color_id, vocab_.num_colors) : 0;
    material[i] = item ? safe_code(item->material_id, vocab_.num_materials) : 0;
    pattern[i] = item ? safe_code(item->pattern_id, vocab_.num_patterns) : 0;
    if (item) {
      for (size_t j = 0; j < item->visual_vector.size(); ++j)
        visual.at(static_cast<int>(i), static_cast<int>(j)) =
            item->visual_vector[j];
    }
  }
  Value content = t.concat(
      {t.embedding(t.param(store, p("emb/item")), item_ids),
       t.embedding(t.param(store, p("emb/brand")), brand),
       t.embedding(t.param(store, p("emb/category")), category),
       t.embedding(t.param(store, p("emb/color")), color),
       t.embedding(t.param(store, p("emb/material")), material),
       t.embedding(t.param(store, p("emb/pattern")), pattern),
       t.matmul(t.input(std::move(visual)), t.param(store, p("proj/visual")))});
  return t.bias_add(t.matmul(content, t.param(store, p("proj/item_token/w"))),
                    t.param(store, p("proj/item_token/b")));
}

TokenBuild SequenceEncoder::build_token_sequence(
    Tape& t, nn::ParameterStore& store, const CustomerSequence& seq,
    const GlobalContext& g, const LocalContext& l, const CatalogIndex& catalog,
    Timestamp train_origin, std::optional<Value> summary) const {
  CustomerSequence trimmed =
      truncate_sequence(seq, static_cast<size_t>(cfg_.max_actions()));

  std::vector<int> country = {safe_code(g.country_id, vocab_.num_countries)};
  std::vector<int> device = {safe_code(g.device_type_id, vocab_.num_devices)};
  Value g_in = t.concat({t.embedding(t.param(store, p("emb/country")), country),
                         t.embedding(t.param(store, p("emb/device")), device)});
  Value g_tok =
      t.bias_add(t.matmul(g_in, t.param(store, p("proj/ctx_global/w"))),
                 t.param(store, p("proj/ctx_global/b")));

  std::vector<int> cat = {
      l.browse_category_id
          ? safe_code(*l.browse_category_id, vocab_.num_categories)
          : 0};
  std::vector<int> flag = {l.is_search ? 1 : 0};
  std::vector<int> query = {
      l.search_query_id ? safe_code(*l.search_query_id, vocab_.num_queries)
                        : 0};
  Value l_in =
      t.concat({t.embedding(t.param(store, p("emb/category")), cat),
                t.embedding(t.param(store, p("emb/search_flag")), flag),
                t.embedding(t.param(store, p("emb/query")), query)});
  Value l_tok =
      t.bias_add(t.matmul(l_in, t.param(store, p("proj/ctx_local/w"))),
                 t.param(store, p("proj/ctx_local/b")));

  Value s_tok = summary ? *summary : t.input(Tensor({1, cfg_.d_model}));

  TokenBuild build;
  build.roles = {TokenRole::kContext, TokenRole::kContext, TokenRole::kSummary};

  int n = static_cast<int>(trimmed.actions.size());
  if (n == 0) {
    build.tokens = t.vstack({g_tok, l_tok, s_tok});
    build.num_positions = cfg_.num_context_tokens;
    return build;
  }

  Value actions = embed_actions(t, store, trimmed.actions, catalog, train_origin);
  // local context fused into the most recent action's representation
  Value last = t.row(actions, n - 1);
  Value fused;
  if (cfg_.average_local_fusion) {
    fused = t.scale(t.add(last, t.row(l_tok, 0)), 0.5);
  } else {
    Value cat2 = t.concat({last, t.row(l_tok, 0)});
    fused = t.bias_add(t.matmul(cat2, t.param(store, p("proj/local_fuse/w"))),
                       t.param(store, p("proj/local_fuse/b")));
  }
  std::vector<Value> parts = {g_tok, l_tok, s_tok};
  if (n > 1) {
    std::vector<int> head_idx(static_cast<size_t>(n - 1));
    for (int i = 0; i < n - 1; ++i) head_idx[static_cast<size_t>(i)] = i;
    parts.push_back(t.rows(actions, head_idx));
  }
  parts.push_back(fused);
  build.tokens = t.vstack(parts);
  build.num_positions = cfg_.num_context_tokens + n;
  build.roles.insert(build.roles.end(), static_cast<size_t>(n),
                     TokenRole::kAction);
  return build;
}

Value SequenceEncoder::encode(Tape& t, nn::ParameterStore& store,
                              const TokenBuild& tokens) const {
  Value x = tokens.tokens;
  for (int layer = 0; layer < cfg_.num_layers; ++layer) {
    std::string lp = prefix_ + "L" + std::to_string(layer) + "/";
    Value h = t.layer_norm(x, t.param(store, lp + "ln1/g"),
                           t.param(store, lp + "ln1/b"));
    Value q = t.bias_add(t.matmul(h, t.param(store, lp + "attn/wq")),
                         t.param(store, lp + "attn/bq"));
    Value k = t.bias_add(t.matmul(h, t.param(store, lp + "attn/wk")),
                         t.param(store, lp + "attn/bk"));
    Value v = t.bias_add(t.matmul(h, t.param(store, lp + "attn/wv")),
                         t.param(store, lp + "attn/bv"));
    Value att = t.attention(q, k, v, cfg_.num_heads, /*causal=*/true);
    Value att_out = t.bias_add(t.matmul(att, t.param(store, lp + "attn/wo")),
                               t.param(store, lp + "attn/bo"));
    x = t.add(x, att_out);
    Value h2 = t.layer_norm(x, t.param(store, lp + "ln2/g"),
                            t.param(store, lp + "ln2/b"));
    Value f1 = t.activation(
        t.bias_add(t.matmul(h2, t.param(store, lp + "ffn/w1")),
                   t.param(store, lp + "ffn/b1")),
        cfg_.activation);
    Value f2 = t.bias_add(t.matmul(f1, t.param(store, lp + "ffn/w2")),
                          t.param(store, lp + "ffn/b2"));
    x = t.add(x, f2);
  }
  return t.layer_norm(x, t.param(store, p("ln_f/g")), t.param(store, p("ln_f/b")));
}

Value SequenceEncoder::last_position_output(Tape& t, Value hidden) const {
  return t.row(hidden, t.val(hidden).rows() - 1);
}

}  // namespace rankstack
