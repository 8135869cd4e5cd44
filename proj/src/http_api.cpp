// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/http_api.hpp"

#include <charconv>
#include <string_view>
#include <vector>

#include <httplib.h>

#include "seqfuse/error.hpp"

namespace seqfuse {
namespace {

ApiResponse json_response(int status, const nlohmann::json& body) {
  ApiResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}, {"status", status}});
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string_view::npos ? path.size() : j;
    if (end > i) parts.emplace_back(path.substr(i, end - i));
    i = end;
  }
  return parts;
}

long long parse_int(const std::string& name, const std::string& text) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ArgumentError("parameter '" + name + "' must be an integer, got '" + text + "'");
  }
  return v;
}

std::optional<std::size_t> top_param(const ApiRequest& req) {
  const auto it = req.query.find("top");
  if (it == req.query.end()) return std::nullopt;
  const long long v = parse_int("top", it->second);
  if (v < 1) throw ArgumentError("parameter 'top' must be >= 1");
  return static_cast<std::size_t>(v);
}

nlohmann::json parse_body(const ApiRequest& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw ArgumentError("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError(std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T body_field(const nlohmann::json& body, const char* name) {
  if (!body.contains(name)) throw ArgumentError(std::string("missing field '") + name + "'");
  try {
    return body.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ArgumentError(std::string("field '") + name + "' has the wrong type");
  }
}

ApiResponse route(OperatorService& service, const ApiRequest& req) {
  const auto parts = split_path(req.path);
  if (parts.empty() || parts[0] != "v1") return error_response(404, "no route for " + req.path);
  const std::size_t n = parts.size();
  const std::string& m = req.method;
  auto is = [&](std::initializer_list<std::string_view> pattern) {
    if (pattern.size() != n - 1) return false;
    std::size_t i = 1;
    for (std::string_view p : pattern) {
      if (p != "*" && parts[i] != p) return false;
      ++i;
    }
    return true;
  };
  auto method_guard = [&](std::string_view allowed) -> std::optional<ApiResponse> {
    if (m == allowed) return std::nullopt;
    ApiResponse r = error_response(405, "method " + m + " not allowed on " + req.path);
    r.headers["Allow"] = std::string(allowed);
    return r;
  };

  if (is({"healthz"})) {
    if (auto r = method_guard("GET")) return *r;
    return json_response(200, {{"status", "ok"},
                               {"mode", std::string(to_string(service.config().mode))},
                               {"model", service.has_model()},
                               {"records", service.dataset().size()},
                               {"sessions", service.session_ids().size()}});
  }
  if (is({"sessions"})) {
    if (m == "GET") return json_response(200, {{"sessions", service.session_ids()}});
    if (auto r = method_guard("POST")) return *r;
    const auto body = parse_body(req);
    CreateSessionRequest create;
    create.query_record = body_field<std::string>(body, "query_record");
    if (body.contains("fuser") && !body["fuser"].is_null()) {
      create.fuser = parse_fuser(body_field<std::string>(body, "fuser"));
    }
    if (body.contains("scope") && !body["scope"].is_null()) create.scope = body_field<std::vector<int>>(body, "scope");
    return json_response(201, to_json(service.create_session(create)));
  }
  if (is({"sessions", "*"})) {
    if (auto r = method_guard("GET")) return *r;
    return json_response(200, to_json(service.get_state(parts[2], top_param(req))));
  }
  if (is({"sessions", "*", "confirm"})) {
    if (auto r = method_guard("POST")) return *r;
    const auto body = parse_body(req);
    std::optional<double> elapsed;
    if (body.contains("elapsed_ms") && !body["elapsed_ms"].is_null()) {
      elapsed = body_field<double>(body, "elapsed_ms") / 1000.0;
    }
    return json_response(200, to_json(service.confirm(parts[2], body_field<int>(body, "camera"),
                                                      body_field<std::string>(body, "record"), elapsed)));
  }
  if (is({"sessions", "*", "restart"})) {
    if (auto r = method_guard("POST")) return *r;
    return json_response(200, to_json(service.restart(parts[2])));
  }
  if (is({"sessions", "*", "lists"})) {
    if (auto r = method_guard("GET")) return *r;
    const auto top = top_param(req);
    nlohmann::json lists = nlohmann::json::array();
    if (const auto it = req.query.find("camera"); it != req.query.end()) {
      const long long cam = parse_int("camera", it->second);
      lists.push_back(to_json(service.get_list(parts[2], static_cast<int>(cam), top)));
    } else {
      for (const CameraList& l : service.get_state(parts[2], top).lists) lists.push_back(to_json(l));
    }
    return json_response(200, {{"session", parts[2]}, {"lists", lists}});
  }
  if (is({"logs", "export"})) {
    if (auto r = method_guard("GET")) return *r;
    std::optional<std::string> session;
    if (const auto it = req.query.find("session"); it != req.query.end()) session = it->second;
    return json_response(200, logs_document(service.logs(session)));
  }
  if (is({"records", "*", "thumbnail"})) {
    if (auto r = method_guard("GET")) return *r;
    const auto idx = service.dataset().find(parts[2]);
    if (!idx) throw NotFoundError("unknown record '" + parts[2] + "'");
    const FeatureRecord& rec = service.dataset().record(*idx);
    ApiResponse r;
    if (rec.image) {
      r.status = 302;
      r.content_type = "text/plain";
      r.headers["Location"] = *rec.image;
      return r;
    }
    r.content_type = "image/svg+xml";
    r.body = identicon_svg(rec.pid, rec.cam);
    return r;
  }
  return error_response(404, "no route for " + req.path);
}

}  // namespace

ApiResponse handle_request(OperatorService& service, const ApiRequest& request) {
  try {
    return route(service, request);
  } catch (const NotFoundError& e) {
    return error_response(404, e.what());
  } catch (const ConflictError& e) {
    return error_response(409, e.what());
  } catch (const ArgumentError& e) {
    return error_response(400, e.what());
  } catch (const DataError& e) {
    return error_response(400, e.what());
  } catch (const DimensionError& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

struct HttpServer::Impl {
  OperatorService& service;
  HttpOptions options;
  httplib::Server server;
  bool bound = false;

  Impl(OperatorService& s, HttpOptions o) : service(s), options(std::move(o)) {}
};

HttpServer::HttpServer(OperatorService& service, HttpOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  auto forward = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest api{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) api.query.emplace(k, v);
    const ApiResponse out = handle_request(impl_->service, api);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body, out.content_type);
  };
  auto& srv = impl_->server;
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  srv.Get(".*", forward);
  srv.Post(".*", forward);
  srv.Put(".*", forward);
  srv.Delete(".*", forward);
  srv.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  if (impl_->options.static_dir) {
    if (!srv.set_mount_point("/", impl_->options.static_dir->string())) {
      throw ArgumentError("static directory " + impl_->options.static_dir->string() + " does not exist");
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& o = impl_->options;
  int port = o.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(o.host);
  } else if (!impl_->server.bind_to_port(o.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port) + " (port busy?)");
  impl_->bound = true;
  o.port = port;
  return port;
}

void HttpServer::run() {
  if (!impl_->bound) throw ArgumentError("HttpServer::run called before bind");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace seqfuse
