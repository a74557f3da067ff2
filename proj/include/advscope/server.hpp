#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "advscope/api.hpp"

namespace advscope {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;              // 0 picks a free port
  std::string static_dir;       // served at / when set
  std::size_t http_threads = 8;
};

/// Splits "host:port" (or a bare port) into host and port.
void parse_address(const std::string& address, std::string& host, int& port);

/// HTTP front end for an Api. All routes are GET; the API lives under /api.
class Server {
 public:
  Server(std::shared_ptr<Api> api, ServerOptions options);
  ~Server();

  /// Binds, then calls on_ready with the bound port, then blocks until stop().
  void run(const std::function<void(int port)>& on_ready = {});
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace advscope
