#include "convrisk/service/session_service.hpp"

#include <algorithm>
#include <numeric>

namespace convrisk::service {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadRequest: return "bad_request";
    case ErrorCode::Unauthorized: return "unauthorized";
    case ErrorCode::Forbidden: return "forbidden";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::Precondition: return "precondition_failed";
    case ErrorCode::Unavailable: return "unavailable";
  }
  return "error";
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadRequest: return 400;
    case ErrorCode::Unauthorized: return 401;
    case ErrorCode::Forbidden: return 403;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::Precondition: return 422;
    case ErrorCode::Unavailable: return 503;
  }
  return 500;
}

std::vector<ImportantFeature> top_features(const std::vector<double>& importance, const QuestionnaireSchema& schema,
                                           std::size_t k) {
  if (importance.size() != schema.d()) throw ArgumentError("importance vector does not match the schema");
  std::vector<std::size_t> order(importance.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<ImportantFeature> out;
  for (auto i : order) out.push_back({schema.feature(i).id, schema.feature(i).name, importance[i]});
  return out;
}

SessionService::SessionService(ModelRegistry& registry, SessionStore& store, UserDirectory users,
                               Interpreter interpreter, Clock clock)
    : registry_(registry),
      store_(store),
      users_(std::move(users)),
      interpreter_(interpreter ? std::move(interpreter) : Interpreter(&SessionService::default_interpreter)),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); })) {}

microlm::Interpretation SessionService::default_interpreter(const ModelBundle& bundle, std::string_view question,
                                                            std::string_view text) {
  return microlm::interpret_answer(bundle.weights, nullptr, bundle.tokenizer, question, text);
}

std::shared_ptr<const ModelBundle> SessionService::model() const {
  auto m = registry_.current();
  if (!m) throw ServiceError(ErrorCode::Unavailable, "no model is loaded");
  return m;
}

std::string SessionService::now() const { return iso8601_utc(clock_()); }

std::shared_ptr<std::mutex> SessionService::lock_for(const std::string& session_id) {
  std::lock_guard lock(locks_mu_);
  auto& m = locks_[session_id];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

std::vector<Question> SessionService::questions() const { return questions_of(model()->schema); }

Session SessionService::create_session(const std::string& patient_user_id) {
  const User* user = users_.by_id(patient_user_id);
  if (!user) throw ServiceError(ErrorCode::NotFound, "unknown user " + patient_user_id);
  if (user->is_admin) throw ServiceError(ErrorCode::Forbidden, "clinician accounts cannot take the questionnaire");
  model();
  std::lock_guard lock(create_mu_);
  Session s;
  s.id = store_.next_id();
  s.patient_user_id = user->id;
  s.created_at = now();
  store_.put(s);
  return s;
}

Session SessionService::load_owned(const User& actor, const std::string& session_id) const {
  auto s = store_.get(session_id);
  if (!s) throw ServiceError(ErrorCode::NotFound, "unknown session " + session_id);
  if (s->patient_user_id != actor.id) throw ServiceError(ErrorCode::Forbidden, "session belongs to another patient");
  return *s;
}

AnswerEntry SessionService::submit_answer(const User& actor, const std::string& session_id, int question_id,
                                          const std::string& free_text) {
  const auto m = model();
  const auto guard = lock_for(session_id);
  std::lock_guard lock(*guard);
  Session s = load_owned(actor, session_id);
  if (s.completed()) throw ServiceError(ErrorCode::Conflict, "session " + session_id + " is already completed");
  const auto pending = pending_index(s, m->schema);
  if (!pending) throw ServiceError(ErrorCode::Conflict, "every question has been answered; complete the session");
  const auto& feature = m->schema.feature(*pending);
  if (question_id != feature.id)
    throw ServiceError(ErrorCode::Conflict, "question " + std::to_string(question_id) + " is out of order; question " +
                                                std::to_string(feature.id) + " is pending");
  if (free_text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ServiceError(ErrorCode::BadRequest, "answer text is empty");

  const auto interp = interpreter_(*m, feature.question_text, free_text);
  AnswerEntry e;
  e.question_id = question_id;
  e.free_text = free_text;
  e.binary_answer = interp.binary_answer;
  e.confidence = interp.p_yes;
  e.ambiguous = interp.ambiguous;
  e.answered_at = now();
  s.answers.push_back(e);
  store_.put(s);
  return e;
}

CompletionResult SessionService::complete_session(const User& actor, const std::string& session_id) {
  const auto guard = lock_for(session_id);
  std::lock_guard lock(*guard);
  Session s = load_owned(actor, session_id);
  if (s.completed()) return {*s.risk_score, *s.predicted_label, s.important_features};

  const auto m = model();
  if (const auto pending = pending_index(s, m->schema)) {
    std::string missing;
    for (std::size_t i = *pending; i < m->schema.d(); ++i)
      missing += (missing.empty() ? "" : ",") + std::to_string(m->schema.feature(i).id);
    throw ServiceError(ErrorCode::Precondition, "session is incomplete; unanswered questions: " + missing);
  }
  const auto answers = s.binary_answers();
  const auto prompt = serialize_answers(answers, m->schema, m->template_kind, m->tokenizer);
  const auto out = microlm::explain(m->weights, m->adapter_ptr(), prompt);

  CompletionResult r{out.p_yes, out.predicted_label, top_features(*out.importance, m->schema)};
  s.risk_score = r.risk_score;
  s.predicted_label = r.predicted_label;
  s.important_features = r.important_features;
  s.completed_at = now();
  store_.put(s);
  return r;
}

std::vector<Session> SessionService::list_sessions(const User& actor, const std::optional<std::string>& patient_id) const {
  if (!actor.is_admin && patient_id && *patient_id != actor.id)
    throw ServiceError(ErrorCode::Forbidden, "patients can only list their own sessions");
  const std::string filter = actor.is_admin ? patient_id.value_or("") : actor.id;
  std::vector<Session> out;
  for (auto& s : store_.all())
    if (filter.empty() || s.patient_user_id == filter) out.push_back(std::move(s));
  std::stable_sort(out.begin(), out.end(),
                   [](const Session& a, const Session& b) { return a.patient_user_id < b.patient_user_id; });
  return out;
}

Session SessionService::get_session(const User& actor, const std::string& session_id) const {
  auto s = store_.get(session_id);
  if (!s) throw ServiceError(ErrorCode::NotFound, "unknown session " + session_id);
  if (!actor.is_admin && s->patient_user_id != actor.id)
    throw ServiceError(ErrorCode::Forbidden, "session belongs to another patient");
  return *s;
}

std::optional<int> SessionService::pending_question(const Session& session) const {
  if (session.completed()) return std::nullopt;
  const auto m = model();
  const auto i = pending_index(session, m->schema);
  if (!i) return std::nullopt;
  return m->schema.feature(*i).id;
}

}  // namespace convrisk::service
