#pragma once

#include <memory>
#include <string>

#include "deal/service/infer.hpp"

namespace deal::service {

// GET /health, GET /images, GET /images/{id}, POST /infer.
class HttpService {
  public:
    explicit HttpService(std::shared_ptr<const ServiceState> state);
    ~HttpService();
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    // Binds and returns the port (an ephemeral one when `port` is 0).
    int bind(const std::string& host, int port);
    // Blocks until stop() is called.
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace deal::service
