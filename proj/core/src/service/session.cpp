#include "convrisk/service/session.hpp"

#include <ctime>
#include <set>

#include "convrisk/error.hpp"

namespace convrisk::service {

using nlohmann::json;

std::vector<Question> questions_of(const QuestionnaireSchema& schema) {
  std::vector<Question> out;
  for (const auto& f : schema.features()) out.push_back({f.id, f.question_text});
  return out;
}

std::vector<std::uint8_t> Session::binary_answers() const {
  std::vector<std::uint8_t> out;
  for (const auto& a : answers)
    if (!a.ambiguous) out.push_back(static_cast<std::uint8_t>(a.binary_answer));
  return out;
}

std::optional<std::size_t> pending_index(const Session& session, const QuestionnaireSchema& schema) {
  std::size_t accepted = 0;
  for (const auto& a : session.answers)
    if (!a.ambiguous) ++accepted;
  if (accepted >= schema.d()) return std::nullopt;
  return accepted;
}

json to_json(const AnswerEntry& a) {
  return json{{"question_id", a.question_id}, {"text", a.free_text},   {"answer", a.binary_answer},
              {"p_yes", a.confidence},        {"ambiguous", a.ambiguous}, {"answered_at", a.answered_at}};
}

json to_json(const Session& s) {
  json answers = json::array();
  for (const auto& a : s.answers) answers.push_back(to_json(a));
  json features = json::array();
  for (const auto& f : s.important_features)
    features.push_back({{"feature_id", f.feature_id}, {"name", f.name}, {"importance", f.importance}});
  return json{{"id", s.id},
              {"patient_id", s.patient_user_id},
              {"created_at", s.created_at},
              {"status", s.completed() ? "completed" : "open"},
              {"answers", answers},
              {"completed_at", s.completed_at ? json(*s.completed_at) : json(nullptr)},
              {"risk_score", s.risk_score ? json(*s.risk_score) : json(nullptr)},
              {"predicted_label", s.predicted_label ? json(*s.predicted_label) : json(nullptr)},
              {"important_features", features}};
}

json summary_json(const Session& s) {
  std::size_t accepted = 0;
  for (const auto& a : s.answers)
    if (!a.ambiguous) ++accepted;
  return json{{"id", s.id},
              {"patient_id", s.patient_user_id},
              {"created_at", s.created_at},
              {"status", s.completed() ? "completed" : "open"},
              {"answered", accepted},
              {"completed_at", s.completed_at ? json(*s.completed_at) : json(nullptr)},
              {"risk_score", s.risk_score ? json(*s.risk_score) : json(nullptr)},
              {"predicted_label", s.predicted_label ? json(*s.predicted_label) : json(nullptr)}};
}

Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.patient_user_id = j.at("patient_id").get<std::string>();
  s.created_at = j.at("created_at").get<std::string>();
  for (const auto& a : j.at("answers")) {
    AnswerEntry e;
    e.question_id = a.at("question_id").get<int>();
    e.free_text = a.at("text").get<std::string>();
    e.binary_answer = a.at("answer").get<int>();
    e.confidence = a.at("p_yes").get<double>();
    e.ambiguous = a.at("ambiguous").get<bool>();
    e.answered_at = a.at("answered_at").get<std::string>();
    s.answers.push_back(std::move(e));
  }
  if (!j.at("completed_at").is_null()) s.completed_at = j.at("completed_at").get<std::string>();
  if (!j.at("risk_score").is_null()) s.risk_score = j.at("risk_score").get<double>();
  if (!j.at("predicted_label").is_null()) s.predicted_label = j.at("predicted_label").get<int>();
  for (const auto& f : j.at("important_features"))
    s.important_features.push_back(
        {f.at("feature_id").get<int>(), f.at("name").get<std::string>(), f.at("importance").get<double>()});
  return s;
}

UserDirectory::UserDirectory(std::vector<User> users) : users_(std::move(users)) {
  std::set<std::string> ids, tokens;
  for (const auto& u : users_) {
    if (u.id.empty()) throw ArgumentError("user with empty id");
    if (u.email.empty()) throw ArgumentError("user " + u.id + " has no email");
    if (u.token.empty()) throw ArgumentError("user " + u.id + " has no token");
    if (!ids.insert(u.id).second) throw ArgumentError("duplicate user id " + u.id);
    if (!tokens.insert(u.token).second) throw ArgumentError("duplicate token for user " + u.id);
  }
}

UserDirectory UserDirectory::parse(std::string_view json_text) {
  try {
    const json j = json::parse(json_text);
    std::vector<User> users;
    for (const auto& u : j.at("users"))
      users.push_back({u.at("id").get<std::string>(), u.at("email").get<std::string>(), u.value("is_admin", false),
                       u.at("token").get<std::string>()});
    return UserDirectory(std::move(users));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed users file: ") + e.what());
  }
}

UserDirectory UserDirectory::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

const User* UserDirectory::by_token(std::string_view token) const {
  for (const auto& u : users_)
    if (u.token == token) return &u;
  return nullptr;
}

const User* UserDirectory::by_id(std::string_view id) const {
  for (const auto& u : users_)
    if (u.id == id) return &u;
  return nullptr;
}

std::string iso8601_utc(std::chrono::system_clock::time_point t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000 - (ms % 1000 < 0 ? 1 : 0));
  const auto millis = ((ms % 1000) + 1000) % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(millis));
  return out;
}

}  // namespace convrisk::service
