#pragma once

#include <cstdint>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rankstack {

using ItemId = int64_t;
using CustomerId = int64_t;
using Timestamp = int64_t;  // seconds since Unix epoch

// Categorical code 0 is reserved for "unknown" in every vocabulary.
inline constexpr int32_t kUnknownCode = 0;

enum class ActionType : uint8_t {
  kClick = 0,
  kAddToWishlist = 1,
  kAddToCart = 2,
  kPurchase = 3,
};
inline constexpr int kNumActionTypes = 4;

const char* action_type_name(ActionType t);
std::optional<ActionType> parse_action_type(const std::string& name);

struct Item {
  ItemId item_id = 0;
  int32_t brand_id = kUnknownCode;
  int32_t category_id = kUnknownCode;
  int32_t color_id = kUnknownCode;
  int32_t material_id = kUnknownCode;
  int32_t pattern_id = kUnknownCode;
  std::vector<double> visual_vector;  // pretrained stand-in, dimension d_pre
  Timestamp activation_time = 0;
  int32_t popularity_rank = 0;  // 0 = most popular, unique per snapshot
};

struct Action {
  ItemId item_id = 0;
  ActionType action_type = ActionType::kClick;
  Timestamp timestamp = 0;
};

inline constexpr size_t kMaxSequenceLength = 100;

struct CustomerSequence {
  CustomerId customer_id = 0;
  std::vector<Action> actions;  // ascending by timestamp, length <= 100
};

struct GlobalContext {
  int32_t country_id = kUnknownCode;
  int32_t device_type_id = kUnknownCode;
};

struct LocalContext {
  std::optional<int32_t> browse_category_id;
  bool is_search = false;
  std::optional<int32_t> search_query_id;  // present implies is_search
  std::vector<ItemId> page_item_ids;
};

struct ScoredItem {
  ItemId item_id = 0;
  std::map<ActionType, double> head_probabilities;
  double blended_score = 0.0;
};

struct RankedList {
  std::vector<ScoredItem> items;  // no duplicate item_id
};

// Suffix of at most max_len most recent actions, order preserved.
// Idempotent: applying twice with the same max_len equals applying once.
CustomerSequence truncate_sequence(const CustomerSequence& seq, size_t max_len);

struct CatalogViolation {
  enum class Kind { kDuplicateId, kBadVisualDim, kDuplicatePopularityRank };
  Kind kind;
  ItemId item_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<CatalogViolation> violations;
  bool ok() const { return violations.empty(); }
};

// Reports duplicate item ids, wrong visual_vector dimension (vs d_pre),
// and duplicate popularity ranks. Never throws.
ValidationReport validate_catalog(const std::vector<Item>& items, size_t d_pre);

// --- line-delimited JSON files ---------------------------------------------

struct Event {
  CustomerId customer_id = 0;
  Action action;
};

// One impression on a ground-truth page: the displayed item, its position,
// and the per-action-type binary labels observed afterwards.
struct PageImpression {
  ItemId item_id = 0;
  int position = 0;
  std::array<uint8_t, kNumActionTypes> labels{};  // indexed by ActionType
  bool any_positive() const {
    for (auto l : labels)
      if (l) return true;
    return false;
  }
};

// A logged browse/search request with its ground-truth page.
struct RequestRecord {
  CustomerId customer_id = 0;
  Timestamp timestamp = 0;
  GlobalContext global;
  LocalContext local;
  std::vector<PageImpression> page;

  std::vector<ItemId> relevant_items() const;
};

std::string item_to_json(const Item& item);
Item item_from_json(const std::string& line);
std::string event_to_json(const Event& ev);
Event event_from_json(const std::string& line);
std::string request_to_json(const RequestRecord& r);
RequestRecord request_from_json(const std::string& line);
std::vector<RequestRecord> load_requests_jsonl(const std::string& path);
void save_requests_jsonl(const std::string& path,
                         const std::vector<RequestRecord>& requests);

std::vector<Item> load_catalog_jsonl(const std::string& path);
void save_catalog_jsonl(const std::string& path, const std::vector<Item>& items);
std::vector<Event> load_events_jsonl(const std::string& path);
void save_events_jsonl(const std::string& path, const std::vector<Event>& events);

// Events grouped by customer, each sequence sorted by timestamp.
std::vector<CustomerSequence> group_events(const std::vector<Event>& events);

}  // namespace rankstack
