#pragma once

#include <memory>
#include <string>

#include "convrisk/service/session_service.hpp"

namespace convrisk::service {

// JSON API:
//   GET  /healthz
//   GET  /questions
//   POST /sessions
//   POST /sessions/{id}/answers    {"question_id": n, "text": "..."}
//   POST /sessions/{id}/complete
//   GET  /sessions[?patient_id=...]
//   GET  /sessions/{id}
// Every route except /healthz needs "Authorization: Bearer <token>".
// Errors are {"code": "...", "message": "..."}.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds and returns the port (port 0 picks a free one). Throws Error.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  void stop();
  // Waits until the listener accepts connections.
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "host:port" -> (host, port). Throws ArgumentError.
std::pair<std::string, int> parse_address(std::string_view addr);

}  // namespace convrisk::service
