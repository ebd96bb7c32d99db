#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convrisk/dataset.hpp"

namespace convrisk::service {

struct User {
  std::string id;
  std::string email;
  bool is_admin = false;  // clinicians are admins
  std::string token;
};

struct Question {
  int id = 0;
  std::string description;
};

std::vector<Question> questions_of(const QuestionnaireSchema& schema);

struct AnswerEntry {
  int question_id = 0;
  std::string free_text;
  int binary_answer = 0;
  double confidence = 0.5;  // p_yes of the interpretation
  bool ambiguous = false;
  std::string answered_at;  // ISO-8601 UTC
};

struct ImportantFeature {
  int feature_id = 0;
  std::string name;
  double importance = 0.0;

  bool operator==(const ImportantFeature&) const = default;
};

struct Session {
  std::string id;
  std::string patient_user_id;
  std::string created_at;
  std::vector<AnswerEntry> answers;  // every submission, ambiguous ones included
  std::optional<std::string> completed_at;
  std::optional<double> risk_score;
  std::optional<int> predicted_label;
  std::vector<ImportantFeature> important_features;

  bool completed() const { return completed_at.has_value(); }
  // Interpreted answers accepted so far, in schema order.
  std::vector<std::uint8_t> binary_answers() const;
};

// Index into the schema of the next question to ask, or nullopt once every
// question has a non-ambiguous answer.
std::optional<std::size_t> pending_index(const Session& session, const QuestionnaireSchema& schema);

nlohmann::json to_json(const AnswerEntry& a);
nlohmann::json to_json(const Session& s);
// Compact form used in listings.
nlohmann::json summary_json(const Session& s);
Session session_from_json(const nlohmann::json& j);

// Users file: {"users": [{"id", "email", "is_admin", "token"}, ...]}.
class UserDirectory {
 public:
  UserDirectory() = default;
  // Throws ArgumentError on duplicate ids or tokens or empty emails.
  explicit UserDirectory(std::vector<User> users);
  static UserDirectory load(const std::filesystem::path& path);
  static UserDirectory parse(std::string_view json_text);

  const User* by_token(std::string_view token) const;
  const User* by_id(std::string_view id) const;
  const std::vector<User>& users() const noexcept { return users_; }

 private:
  std::vector<User> users_;
};

// "2026-10-16T08:30:00.000Z"
std::string iso8601_utc(std::chrono::system_clock::time_point t);

}  // namespace convrisk::service
