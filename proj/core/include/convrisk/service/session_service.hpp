#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "convrisk/error.hpp"
#include "convrisk/microlm/model.hpp"
#include "convrisk/service/model_registry.hpp"
#include "convrisk/service/session.hpp"
#include "convrisk/service/store.hpp"

namespace convrisk::service {

enum class ErrorCode { BadRequest, Unauthorized, Forbidden, NotFound, Conflict, Precondition, Unavailable };

std::string_view to_string(ErrorCode code);
int http_status(ErrorCode code);

class ServiceError : public Error {
 public:
  ServiceError(ErrorCode code, const std::string& message) : Error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct CompletionResult {
  double risk_score = 0.0;
  int predicted_label = 0;
  std::vector<ImportantFeature> important_features;
};

// Session workflow on top of a model registry and a store. Each session is
// a single-writer entity: calls touching the same session are serialised,
// calls on different sessions proceed independently.
class SessionService {
 public:
  using Interpreter =
      std::function<microlm::Interpretation(const ModelBundle&, std::string_view question, std::string_view text)>;
  using Clock = std::function<std::chrono::system_clock::time_point()>;

  SessionService(ModelRegistry& registry, SessionStore& store, UserDirectory users, Interpreter interpreter = {},
                 Clock clock = {});

  const UserDirectory& users() const noexcept { return users_; }
  std::vector<Question> questions() const;

  Session create_session(const std::string& patient_user_id);
  // `actor` must own the session.
  AnswerEntry submit_answer(const User& actor, const std::string& session_id, int question_id,
                            const std::string& free_text);
  CompletionResult complete_session(const User& actor, const std::string& session_id);
  // Patients see their own sessions; clinicians see everything, optionally
  // filtered by patient. Ordered by patient id, then session id.
  std::vector<Session> list_sessions(const User& actor, const std::optional<std::string>& patient_id) const;
  Session get_session(const User& actor, const std::string& session_id) const;
  // Id of the question the session is waiting for, if any.
  std::optional<int> pending_question(const Session& session) const;

  // Default interpreter: the base model of the bundle (no adapter).
  static microlm::Interpretation default_interpreter(const ModelBundle& bundle, std::string_view question,
                                                     std::string_view text);

 private:
  std::shared_ptr<const ModelBundle> model() const;
  std::shared_ptr<std::mutex> lock_for(const std::string& session_id);
  Session load_owned(const User& actor, const std::string& session_id) const;
  std::string now() const;

  ModelRegistry& registry_;
  SessionStore& store_;
  UserDirectory users_;
  Interpreter interpreter_;
  Clock clock_;
  std::mutex locks_mu_;
  std::mutex create_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

// Top `k` features by importance, ties broken by schema order.
std::vector<ImportantFeature> top_features(const std::vector<double>& importance, const QuestionnaireSchema& schema,
                                           std::size_t k = 5);

}  // namespace convrisk::service
