#pragma once

#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "pmt2i/mock.hpp"

namespace pmt2i {

/// Serves a MockBackend over real HTTP on localhost, so clients can be
/// exercised through HttpTransport end to end.
class MockServer {
 public:
  explicit MockServer(std::shared_ptr<MockBackend> backend) : backend_(std::move(backend)) {
    server_.Post(R"(/v1/.+)", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body, nullptr, false);
      WireResponse response = body.is_discarded()
                                  ? protocol_error(400, "bad_request", "malformed JSON body")
                                  : backend_->handle(req.path, body);
      res.status = response.status;
      res.set_content(response.body.is_null() ? response.raw : response.body.dump(),
                      "application/json");
    });
    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      json routes = json::object();
      for (auto route : {kRouteTranslate, kRouteParaphrase, kRouteGenerate, kRouteEmbedText,
                         kRouteEmbedImage, kRouteJudge, kRouteReward, kRouteVqa}) {
        routes[std::string(route)] = backend_->options().model_id;
      }
      res.set_content(json{{"status", "ok"}, {"dim", backend_->options().dim}, {"routes", routes}}.dump(),
                      "application/json");
    });
  }

  ~MockServer() { stop(); }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  /// Binds and starts serving in a background thread; port 0 picks a free
  /// port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error(Errc::io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) {
      throw Error(Errc::io, "cannot listen on " + host + ":" + std::to_string(port));
    }
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  MockBackend& backend() noexcept { return *backend_; }

 private:
  std::shared_ptr<MockBackend> backend_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace pmt2i
