#pragma once

#include <memory>
#include <string>
#include <thread>

#include "rankstack/platform.hpp"

namespace rankstack::platform {

// JSON over HTTP:
//   POST /v1/rank    {customer_id, country_id, device_type_id, premise,
//                     category_id, query_id?, page_index?, page_size?}
//   POST /v1/events  {customer_id, item_id, action_type, timestamp}
//   GET  /v1/version
//   GET  /health
class HttpService {
public:
  explicit HttpService(Engine& engine);
  ~HttpService();

  // binds and serves on a background thread; port 0 picks a free port
  int start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

private:
  Engine& engine_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread server_thread_;
  int port_ = 0;
};

}  // namespace rankstack::platform
