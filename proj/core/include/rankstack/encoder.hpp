#pragma once

#include <string>
#include <vector>

#include "rankstack/autodiff.hpp"
#include "rankstack/catalog.hpp"
#include "rankstack/domain.hpp"
#include "rankstack/params.hpp"

namespace rankstack {

struct EncoderConfig {
  int num_layers = 2;
  int num_heads = 4;
  int d_model = 48;
  int max_seq_len = 103;  // action positions + context positions
  nn::Activation activation = nn::Activation::kGelu;
  int num_context_tokens = 3;  // global, local, summary
  int ffn_hidden = 0;          // 0 -> 2 * d_model
  bool average_local_fusion = false;  // averaging instead of concat+projection

  int ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 2 * d_model; }
  int max_actions() const { return max_seq_len - num_context_tokens; }
  void validate() const;

  // 2 layers, 4 heads, gelu, up to 100 actions
  static EncoderConfig retrieval_default();
  // 2 layers, 8 heads, relu, d_model 128, up to 80 actions
  static EncoderConfig ranker_default();
};

enum class TokenRole : uint8_t { kContext = 0, kSummary = 1, kAction = 2 };

// Token matrix assembled on a tape, ready for encode().
struct TokenBuild {
  nn::Value tokens;  // [num_positions x d_model]
  std::vector<TokenRole> roles;
  int num_positions = 0;
};

// Transformer encoder over heterogeneous journey tokens. Context tokens
// occupy the starting positions; a causal mask prevents backward attention;
// positional encoding is omitted.
class SequenceEncoder {
public:
  SequenceEncoder(EncoderConfig cfg, VocabSpec vocab, ItemVocab item_vocab,
                  std::string prefix);

  const EncoderConfig& config() const { return cfg_; }
  const VocabSpec& vocab() const { return vocab_; }
  const ItemVocab& item_vocab() const { return item_vocab_; }
  const std::string& prefix() const { return prefix_; }

  void init_params(nn::ParameterStore& store, Rng& rng) const;

  // Single action embedding: item id, categorical metadata, projected visual
  // vector, action type and timestamp bucket, projected to d_model.
  nn::Value embed_action(nn::Tape& t, nn::ParameterStore& store,
                         const Action& action, const Item* item,
                         Timestamp train_origin) const;

  // Content-only item embedding (no action type / timestamp): used for
  // summary tokens and cold-start relevance. ids are catalog item ids.
  nn::Value embed_item_content(nn::Tape& t, nn::ParameterStore& store,
                               const CatalogIndex& catalog,
                               std::span<const ItemId> ids) const;

  // Layout: [global ctx, local ctx, summary, action tokens...]. The summary
  // slot is the provided vector, or zeros when absent. Oversized histories
  // are truncated to the most recent actions first.
  TokenBuild build_token_sequence(nn::Tape& t, nn::ParameterStore& store,
                                  const CustomerSequence& seq,
                                  const GlobalContext& g, const LocalContext& l,
                                  const CatalogIndex& catalog,
                                  Timestamp train_origin,
                                  std::optional<nn::Value> summary) const;

  // causal encode; returns hidden states [num_positions x d_model]
  nn::Value encode(nn::Tape& t, nn::ParameterStore& store,
                   const TokenBuild& tokens) const;

  nn::Value last_position_output(nn::Tape& t, nn::Value hidden) const;

  // timestamp quantization: floor(log2(1 + seconds since train origin)),
  // capped at 31; earlier than the origin falls into bucket 0
  static int timestamp_bucket(Timestamp ts, Timestamp train_origin);
  static constexpr int kNumTimestampBuckets = 32;

  // widths of the concatenated action-embedding pieces
  static constexpr int kIdWidth = 32;
  static constexpr int kMetaWidth = 8;
  static constexpr int kVisualWidth = 32;
  static constexpr int kActionTypeWidth = 8;
  static constexpr int kTimestampWidth = 8;
  static constexpr int kContentWidth =
      kIdWidth + 5 * kMetaWidth + kVisualWidth;  // 104

private:
  std::string p(const char* name) const { return prefix_ + name; }
  nn::Value embed_actions(nn::Tape& t, nn::ParameterStore& store,
                          std::span<const Action> actions,
                          const CatalogIndex& catalog,
                          Timestamp train_origin) const;

  EncoderConfig cfg_;
  VocabSpec vocab_;
  ItemVocab item_vocab_;
  std::string prefix_;
};

}  // namespace rankstack
