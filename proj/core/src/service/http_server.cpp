#include "convrisk/service/http_server.hpp"

#include <httplib.h>

#include <charconv>
#include <map>

namespace convrisk::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), json{{"code", std::string(to_string(code))}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    throw ServiceError(ErrorCode::BadRequest, "request body is not valid JSON");
  }
}

json grouped(const std::vector<Session>& sessions) {
  json list = json::array();
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& s : sessions) {
    list.push_back(summary_json(s));
    groups[s.patient_user_id].push_back(s.id);
  }
  json g = json::array();
  for (const auto& [patient, ids] : groups) g.push_back({{"patient_id", patient}, {"session_ids", ids}});
  return json{{"sessions", list}, {"groups", g}};
}

}  // namespace

std::pair<std::string, int> parse_address(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw ArgumentError("address must look like host:port");
  int port = -1;
  const auto digits = addr.substr(colon + 1);
  const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || p != digits.data() + digits.size() || port < 0 || port > 65535)
    throw ArgumentError("invalid port in address '" + std::string(addr) + "'");
  return {std::string(addr.substr(0, colon)), port};
}

struct HttpServer::Impl {
  SessionService& service;
  httplib::Server server;

  explicit Impl(SessionService& s) : service(s) { routes(); }

  const User& authenticate(const httplib::Request& req) const {
    const auto header = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (header.rfind(prefix, 0) != 0) throw ServiceError(ErrorCode::Unauthorized, "missing bearer token");
    const User* u = service.users().by_token(std::string_view(header).substr(prefix.size()));
    if (!u) throw ServiceError(ErrorCode::Unauthorized, "invalid token");
    return *u;
  }

  // Runs a handler and converts failures into the JSON error shape.
  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        send_error(res, e.code(), e.what());
      } catch (const ArgumentError& e) {
        send_error(res, ErrorCode::BadRequest, e.what());
      } catch (const json::exception& e) {
        send_error(res, ErrorCode::BadRequest, e.what());
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"code", "internal"}, {"message", e.what()}}.dump(), "application/json");
      }
    };
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/healthz", wrap([this](const httplib::Request&, httplib::Response& res) {
      json body{{"status", "ok"}, {"model_loaded", false}};
      try {
        body["d"] = service.questions().size();
        body["model_loaded"] = true;
      } catch (const ServiceError&) {
      }
      send_json(res, 200, body);
    }));

    server.Get("/questions", wrap([this](const httplib::Request& req, httplib::Response& res) {
      authenticate(req);
      json list = json::array();
      for (const auto& q : service.questions()) list.push_back({{"id", q.id}, {"description", q.description}});
      send_json(res, 200, json{{"questions", list}});
    }));

    server.Post("/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto& user = authenticate(req);
      const auto s = service.create_session(user.id);
      json qs = json::array();
      for (const auto& q : service.questions()) qs.push_back({{"id", q.id}, {"description", q.description}});
      const auto pending = service.pending_question(s);
      send_json(res, 201, json{{"session", to_json(s)}, {"questions", qs}, {"pending_question_id", pending ? json(*pending) : json(nullptr)}});
    }));

    server.Post(R"(/sessions/([^/]+)/answers)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto& user = authenticate(req);
      const json body = parse_body(req);
      if (!body.contains("question_id") || !body.at("question_id").is_number_integer())
        throw ServiceError(ErrorCode::BadRequest, "question_id (integer) is required");
      if (!body.contains("text") || !body.at("text").is_string())
        throw ServiceError(ErrorCode::BadRequest, "text (string) is required");
      const std::string id = req.matches[1];
      const auto entry = service.submit_answer(user, id, body.at("question_id").get<int>(), body.at("text").get<std::string>());
      const auto s = service.get_session(user, id);
      const auto pending = service.pending_question(s);
      send_json(res, 200, json{{"answer", to_json(entry)}, {"pending_question_id", pending ? json(*pending) : json(nullptr)}});
    }));

    server.Post(R"(/sessions/([^/]+)/complete)", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto& user = authenticate(req);
      const std::string id = req.matches[1];
      service.complete_session(user, id);
      const auto s = service.get_session(user, id);
      json features = json::array();
      for (const auto& f : s.important_features)
        features.push_back({{"feature_id", f.feature_id}, {"name", f.name}, {"importance", f.importance}});
      send_json(res, 200,
                json{{"session_id", s.id},
                     {"risk_score", *s.risk_score},
                     {"predicted_label", *s.predicted_label},
                     {"important_features", features},
                     {"completed_at", *s.completed_at}});
    }));

    server.Get("/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto& user = authenticate(req);
      std::optional<std::string> filter;
      if (req.has_param("patient_id")) filter = req.get_param_value("patient_id");
      send_json(res, 200, grouped(service.list_sessions(user, filter)));
    }));

    server.Get(R"(/sessions/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const auto& user = authenticate(req);
      send_json(res, 200, to_json(service.get_session(user, req.matches[1])));
    }));
  }
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace convrisk::service
