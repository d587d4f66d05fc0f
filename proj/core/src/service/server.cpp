#include <httplib.h>

#include <cstdio>

#include "dipa/error.hpp"
#include "dipa/service/service.hpp"

namespace dipa::service {

namespace {

constexpr const char* kPrefix = "/api/v1";

constexpr const char* kPlaceholderIndex = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>dipa</title></head>
<body>
<h1>dipa service</h1>
<p>No web UI bundle is installed. Start the server with <code>--static DIR</code> to serve one.</p>
<ul>
<li><a href="/api/v1/classes">/api/v1/classes</a></li>
<li><a href="/api/v1/prototypes">/api/v1/prototypes</a></li>
<li><a href="/api/v1/projection">/api/v1/projection</a></li>
<li><a href="/api/v1/metrics">/api/v1/metrics</a></li>
</ul>
</body></html>
)";

void forward(Api& api, const httplib::Request& in, httplib::Response& out) {
  Request req;
  req.method = in.method;
  req.path = in.path.substr(std::char_traits<char>::length(kPrefix));
  for (const auto& [k, v] : in.params) req.query[k] = v;
  req.body = in.body;
  const Response r = api.handle(req);
  out.status = r.status;
  out.set_content(r.payload(), r.content_type);
}

}  // namespace

struct HttpServer::Impl {
  httplib::Server svr;
};

HttpServer::HttpServer(Api& api, const ServerOptions& opts) : impl_(std::make_unique<Impl>()) {
  auto& svr = impl_->svr;
  const std::string route = std::string(kPrefix) + "/.*";
  svr.Get(route, [&api](const httplib::Request& q, httplib::Response& r) { forward(api, q, r); });
  svr.Post(route, [&api](const httplib::Request& q, httplib::Response& r) { forward(api, q, r); });
  if (!opts.static_dir.empty() && std::filesystem::is_directory(opts.static_dir)) {
    svr.set_mount_point("/", opts.static_dir.string());
  } else {
    svr.Get("/", [](const httplib::Request&, httplib::Response& r) { r.set_content(kPlaceholderIndex, "text/html"); });
  }
  port_ = opts.port == 0 ? svr.bind_to_any_port(opts.host) : (svr.bind_to_port(opts.host, opts.port) ? opts.port : -1);
  if (port_ <= 0) throw dipa::Error("cannot listen on " + opts.host + ":" + std::to_string(opts.port));
}

HttpServer::~HttpServer() = default;

void HttpServer::run() { impl_->svr.listen_after_bind(); }

void HttpServer::stop() { impl_->svr.stop(); }

void serve(Api& api, const ServerOptions& opts) {
  HttpServer server(api, opts);
  std::printf("serving on http://%s:%d\n", opts.host.c_str(), server.port());
  std::fflush(stdout);
  server.run();
}

}  // namespace dipa::service
