#include "rankstack/domain.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace rankstack {

using nlohmann::json;

const char* action_type_name(ActionType t) {
  switch (t) {
    case ActionType::kClick: return "click";
    case ActionType::kAddToWishlist: return "add_to_wishlist";
    case ActionType::kAddToCart: return "add_to_cart";
    case ActionType::kPurchase: return "purchase";
  }
  return "click";
}

std::optional<ActionType> parse_action_type(const std::string& name) {
  if (name == "click") return ActionType::kClick;
  if (name == "add_to_wishlist") return ActionType::kAddToWishlist;
  if (name == "add_to_cart") return ActionType::kAddToCart;
  if (name == "purchase") return ActionType::kPurchase;
  return std::nullopt;
}

CustomerSequence truncate_sequence(const CustomerSequence& seq, size_t max_len) {
  CustomerSequence out;
  out.customer_id = seq.customer_id;
  if (seq.actions.size() <= max_len) {
    out.actions = seq.actions;
  } else {
    out.actions.assign(seq.actions.end() - static_cast<ptrdiff_t>(max_len),
                       seq.actions.end());
  }
  return out;
}

ValidationReport validate_catalog(const std::vector<Item>& items, size_t d_pre) {
  ValidationReport report;
  std::unordered_map<ItemId, int> id_count;
  std::unordered_map<int32_t, int> rank_count;
  for (const auto& it : items) {
    ++id_count[it.item_id];
    ++rank_count[it.popularity_rank];
  }
  std::unordered_set<ItemId> reported_ids;
  std::unordered_set<int32_t> reported_ranks;
  for (const auto& it : items) {
    if (id_count[it.item_id] > 1 && reported_ids.insert(it.item_id).second) {
      report.violations.push_back({CatalogViolation::Kind::kDuplicateId,
                                   it.item_id,
                                   "duplicate item_id " + std::to_string(it.item_id)});
    }
    if (it.visual_vector.size() != d_pre) {
      report.violations.push_back(
          {CatalogViolation::Kind::kBadVisualDim, it.item_id,
           "visual_vector has " + std::to_string(it.visual_vector.size()) +
               " entries, expected " + std::to_string(d_pre)});
    }
    if (rank_count[it.popularity_rank] > 1 &&
        reported_ranks.insert(it.popularity_rank).second) {
      report.violations.push_back(
          {CatalogViolation::Kind::kDuplicatePopularityRank, it.item_id,
           "popularity_rank " + std::to_string(it.popularity_rank) +
               " assigned to multiple items"});
    }
  }
  return report;
}

std::string item_to_json(const Item& item) {
  json j;
  j["item_id"] = item.item_id;
  j["brand_id"] = item.brand_id;
  j["category_id"] = item.category_id;
  j["color_id"] = item.color_id;
  j["material_id"] = item.material_id;
  j["pattern_id"] = item.pattern_id;
  j["visual_vector"] = item.visual_vector;
  j["activation_time"] = item.activation_time;
  j["popularity_rank"] = item.popularity_rank;
  return j.dump();
}

Item item_from_json(const std::string& line) {
  json j = json::parse(line);
  Item item;
  item.item_id = j.at("item_id").get<ItemId>();
  item.brand_id = j.at("brand_id").get<int32_t>();
  item.category_id = j.at("category_id").get<int32_t>();
  item.color_id = j.value("color_id", kUnknownCode);
  item.material_id = j.value("material_id", kUnknownCode);
  item.pattern_id = j.value("pattern_id", kUnknownCode);
  item.visual_vector = j.at("visual_vector").get<std::vector<double>>();
  item.activation_time = j.value("activation_time", Timestamp{0});
  item.popularity_rank = j.at("popularity_rank").get<int32_t>();
  return item;
}

std::string event_to_json(const Event& ev) {
  json j;
  j["customer_id"] = ev.customer_id;
  j["item_id"] = ev.action.item_id;
  j["action_type"] = action_type_name(ev.action.action_type);
  j["timestamp"] = ev.action.timestamp;
  return j.dump();
}

Event event_from_json(const std::string& line) {
  json j = json::parse(line);
  Event ev;
  ev.customer_id = j.at("customer_id").get<CustomerId>();
  ev.action.item_id = j.at("item_id").get<ItemId>();
  auto type = parse_action_type(j.at("action_type").get<std::string>());
  if (!type) throw std::runtime_error("unknown action_type in event");
  ev.action.action_type = *type;
  ev.action.timestamp = j.at("timestamp").get<Timestamp>();
  return ev;
}

std::vector<ItemId> RequestRecord::relevant_items() const {
  std::vector<ItemId> out;
  for (const auto& imp : page)
    if (imp.any_positive()) out.push_back(imp.item_id);
  return out;
}

std::string request_to_json(const RequestRecord& r) {
  json j;
  j["customer_id"] = r.customer_id;
  j["timestamp"] = r.timestamp;
  j["country_id"] = r.global.country_id;
  j["device_type_id"] = r.global.device_type_id;
  j["is_search"] = r.local.is_search;
  if (r.local.browse_category_id)
    j["browse_category_id"] = *r.local.browse_category_id;
  if (r.local.search_query_id)
    j["search_query_id"] = *r.local.search_query_id;
  json page = json::array();
  for (const auto& imp : r.page) {
    json e;
    e["item_id"] = imp.item_id;
    e["pos"] = imp.position;
    e["click"] = imp.labels[0];
    e["a2w"] = imp.labels[1];
    e["a2c"] = imp.labels[2];
    e["purchase"] = imp.labels[3];
    page.push_back(std::move(e));
  }
  j["page"] = std::move(page);
  return j.dump();
}

RequestRecord request_from_json(const std::string& line) {
  json j = json::parse(line);
  RequestRecord r;
  r.customer_id = j.at("customer_id").get<CustomerId>();
  r.timestamp = j.at("timestamp").get<Timestamp>();
  r.global.country_id = j.value("country_id", kUnknownCode);
  r.global.device_type_id = j.value("device_type_id", kUnknownCode);
  r.local.is_search = j.value("is_search", false);
  if (j.contains("browse_category_id"))
    r.local.browse_category_id = j["browse_category_id"].get<int32_t>();
  if (j.contains("search_query_id"))
    r.local.search_query_id = j["search_query_id"].get<int32_t>();
  for (const auto& e : j.at("page")) {
    PageImpression imp;
    imp.item_id = e.at("item_id").get<ItemId>();
    imp.position = e.at("pos").get<int>();
    imp.labels[0] = e.value("click", 0);
    imp.labels[1] = e.value("a2w", 0);
    imp.labels[2] = e.value("a2c", 0);
    imp.labels[3] = e.value("purchase", 0);
    r.page.push_back(imp);
  }
  return r;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::vector<Item> load_catalog_jsonl(const std::string& path) {
  std::vector<Item> items;
  for (const auto& line : read_lines(path)) items.push_back(item_from_json(line));
  return items;
}

void save_catalog_jsonl(const std::string& path, const std::vector<Item>& items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& it : items) out << item_to_json(it) << '\n';
}

std::vector<Event> load_events_jsonl(const std::string& path) {
  std::vector<Event> events;
  for (const auto& line : read_lines(path)) events.push_back(event_from_json(line));
  return events;
}

void save_events_jsonl(const std::string& path, const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& ev : events) out << event_to_json(ev) << '\n';
}

std::vector<RequestRecord> load_requests_jsonl(const std::string& path) {
  std::vector<RequestRecord> out;
  for (const auto& line : read_lines(path)) out.push_back(request_from_json(line));
  return out;
}

void save_requests_jsonl(const std::string& path,
                         const std::vector<RequestRecord>& requests) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : requests) out << request_to_json(r) << '\n';
}

std::vector<CustomerSequence> group_events(const std::vector<Event>& events) {
  std::unordered_map<CustomerId, CustomerSequence> by_customer;
  for (const auto& ev : events) {
    auto& seq = by_customer[ev.customer_id];
    seq.customer_id = ev.customer_id;
    seq.actions.push_back(ev.action);
  }
  std::vector<CustomerSequence> out;
  out.reserve(by_customer.size());
  for (auto& [id, seq] : by_customer) {
    std::stable_sort(seq.actions.begin(), seq.actions.end(),
                     [](const Action& a, const Action& b) {
                       return a.timestamp < b.timestamp;
                     });
    out.push_back(std::move(seq));
  }
  std::sort(out.begin(), out.end(),
            [](const CustomerSequence& a, const CustomerSequence& b) {
              return a.customer_id < b.customer_id;
            });
  return out;
}

}  // namespace rankstack
