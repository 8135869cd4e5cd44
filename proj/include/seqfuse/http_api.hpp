// SPDX-License-Identifier: Apache-2.0
//
// Versioned HTTP+JSON front end for OperatorService.
//
//   GET  /v1/healthz
//   GET  /v1/sessions
//   POST /v1/sessions                     {"query_record", "fuser"?, "scope"?}
//   GET  /v1/sessions/{id}?top=
//   POST /v1/sessions/{id}/confirm        {"camera", "record", "elapsed_ms"?}
//   POST /v1/sessions/{id}/restart
//   GET  /v1/sessions/{id}/lists?camera=&top=
//   GET  /v1/logs/export?session=
//   GET  /v1/records/{id}/thumbnail
//
// Errors carry {"error": message, "status": code}: 400 bad input, 404 unknown
// session / record / camera, 409 conflicting state.
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "seqfuse/service.hpp"

namespace seqfuse {

struct ApiRequest {
  std::string method;
  std::string path;  // already percent-decoded
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Transport-independent request router.
ApiResponse handle_request(OperatorService& service, const ApiRequest& request);

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Static files (for example the operator console bundle) served under "/".
  std::optional<std::filesystem::path> static_dir;
};

class HttpServer {
 public:
  HttpServer(OperatorService& service, HttpOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; returns the bound port. Throws Error when busy.
  int bind();
  /// Serves until stop(). Requires bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace seqfuse
