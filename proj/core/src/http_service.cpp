#include "rankstack/http_service.hpp"

#include "httplib.h"
#include "json.hpp"

namespace rankstack::platform {

using nlohmann::json;

struct HttpService::Impl {
  httplib::Server server;
};

HttpService::HttpService(Engine& engine)
    : engine_(engine), impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;

  server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"status\":\"ok\"}", "application/json");
  });

  server.Get("/v1/version",
             [this](const httplib::Request&, httplib::Response& res) {
               json j;
               auto dep = engine_.active();
               j["model_version"] = dep ? dep->version : "";
               j["active"] = dep != nullptr;
               res.set_content(j.dump(), "application/json");
             });

  server.Post("/v1/events", [this](const httplib::Request& req,
                                   httplib::Response& res) {
    try {
      json j = json::parse(req.body);
      Action action;
      action.item_id = j.at("item_id").get<ItemId>();
      auto type = parse_action_type(j.at("action_type").get<std::string>());
      if (!type) throw std::invalid_argument("unknown action_type");
      action.action_type = *type;
      action.timestamp = j.at("timestamp").get<Timestamp>();
      engine_.ingest_event(j.at("customer_id").get<CustomerId>(), action);
      res.set_content("{\"status\":\"ok\"}", "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      json err;
      err["status"] = "rejected";
      err["reason"] = e.what();
      res.set_content(err.dump(), "application/json");
    }
  });

  server.Post("/v1/rank", [this](const httplib::Request& req,
                                 httplib::Response& res) {
    try {
      json j = json::parse(req.body);
      RankRequest rank;
      rank.customer_id = j.at("customer_id").get<CustomerId>();
      rank.global.country_id = j.value("country_id", kUnknownCode);
      rank.global.device_type_id = j.value("device_type_id", kUnknownCode);
      rank.is_search = j.value("premise", "browse") == std::string("search");
      if (j.contains("category_id"))
        rank.category_id = j["category_id"].get<int32_t>();
      if (j.contains("query_id")) rank.query_id = j["query_id"].get<int32_t>();
      rank.page_index = j.value("page_index", 0);
      if (j.contains("page_size")) rank.page_size = j["page_size"].get<int>();
      if (j.contains("now")) rank.now = j["now"].get<Timestamp>();

      RankResponse out = engine_.handle_rank(rank);
      json body;
      body["model_version"] = out.model_version;
      body["served_at"] = out.served_at;
      switch (out.status) {
        case RankStatus::kOk: body["status"] = "ok"; break;
        case RankStatus::kUnknownCategory:
          body["status"] = "unknown_category";
          break;
        case RankStatus::kServiceUnavailable:
          body["status"] = "unavailable";
          break;
      }
      if (!out.detail.empty()) body["detail"] = out.detail;
      json items = json::array();
      for (const auto& s : out.items) {
        json e;
        e["item_id"] = s.item_id;
        e["score"] = s.blended_score;
        items.push_back(std::move(e));
      }
      body["items"] = std::move(items);
      if (out.status == RankStatus::kServiceUnavailable) res.status = 503;
      res.set_content(body.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      json err;
      err["status"] = "rejected";
      err["reason"] = e.what();
      res.set_content(err.dump(), "application/json");
    }
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  auto& server = impl_->server;
  if (port == 0) {
    port_ = server.bind_to_any_port(host);
  } else {
    if (!server.bind_to_port(host, port))
      throw std::runtime_error("cannot bind " + host + ":" +
                               std::to_string(port));
    port_ = port;
  }
  server_thread_ = std::thread([this]() { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpService::stop() {
  if (server_thread_.joinable()) {
    impl_->server.stop();
    server_thread_.join();
  }
}

}  // namespace rankstack::platform
