#include "advscope/server.hpp"

#include <charconv>

#include "advscope/error.hpp"
#include "httplib.h"

namespace advscope {

void parse_address(const std::string& address, std::string& host, int& port) {
  const auto colon = address.rfind(':');
  const std::string port_text = colon == std::string::npos ? address : address.substr(colon + 1);
  if (colon != std::string::npos && colon > 0) host = address.substr(0, colon);
  int value = -1;
  auto [end, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
  if (ec != std::errc() || end != port_text.data() + port_text.size() || value < 0 || value > 65535) {
    throw ValidationError("'" + address + "' is not host:port", "addr");
  }
  port = value;
}

struct Server::Impl {
  std::shared_ptr<Api> api;
  ServerOptions options;
  httplib::Server http;
};

Server::Server(std::shared_ptr<Api> api, ServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->api = std::move(api);
  impl_->options = std::move(options);
  auto& http = impl_->http;
  const std::size_t threads = std::max<std::size_t>(1, impl_->options.http_threads);
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

  Api* handler = impl_->api.get();
  http.Get(R"(/api(/.*)?)", [handler](const httplib::Request& req, httplib::Response& res) {
    QueryParams params;
    for (const auto& [key, value] : req.params) params[key] = value;
    const std::string path = req.matches.size() > 1 ? req.matches[1].str() : std::string("/");
    ApiResponse response = handler->handle(path, params);
    res.status = response.status;
    for (const auto& [key, value] : response.headers) res.set_header(key, value);
    res.set_content(std::move(response.body), response.content_type);
  });
  if (!impl_->options.static_dir.empty() && !http.set_mount_point("/", impl_->options.static_dir)) {
    throw IoError("cannot serve static files from " + impl_->options.static_dir);
  }
}

Server::~Server() = default;

void Server::run(const std::function<void(int)>& on_ready) {
  auto& http = impl_->http;
  int port = impl_->options.port;
  if (port == 0) {
    port = http.bind_to_any_port(impl_->options.host);
    if (port < 0) throw IoError("cannot bind " + impl_->options.host);
  } else if (!http.bind_to_port(impl_->options.host, port)) {
    throw IoError("cannot bind " + impl_->options.host + ":" + std::to_string(port));
  }
  if (on_ready) on_ready(port);
  http.listen_after_bind();
}

void Server::stop() { impl_->http.stop(); }

}  // namespace advscope
