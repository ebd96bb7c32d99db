#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "convrisk/microlm/model.hpp"
#include "convrisk/service/http_server.hpp"
#include "convrisk/service/model_registry.hpp"
#include "convrisk/service/session_service.hpp"
#include "convrisk/service/store.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a _res macro.
#include <httplib.h>

using namespace convrisk;
using namespace convrisk::service;
using nlohmann::json;

namespace {

ModelBundle tiny_bundle(std::uint64_t seed = 1, TemplateKind kind = TemplateKind::List) {
  ModelBundle b;
  b.schema = default_schema();
  b.tokenizer = Tokenizer::for_schema(b.schema);
  b.weights = microlm::MicroLMWeights::initialize(testkit::tiny_config(b.tokenizer.size()), seed);
  b.adapter = testkit::random_adapter(b.weights.config, seed + 1);
  b.template_kind = kind;
  return b;
}

// Free text starting with "yes" is a confident yes, "maybe" is ambiguous,
// anything else a confident no.
microlm::Interpretation fake_interpreter(const ModelBundle&, std::string_view, std::string_view text) {
  if (text.rfind("yes", 0) == 0) return {1, 0.9, false};
  if (text.rfind("maybe", 0) == 0) return {1, 0.52, true};
  return {0, 0.1, false};
}

UserDirectory test_users() {
  return UserDirectory({{"p1", "p1@example.org", false, "tok-p1"},
                        {"p2", "p2@example.org", false, "tok-p2"},
                        {"c1", "c1@example.org", true, "tok-c1"}});
}

std::chrono::system_clock::time_point fixed_clock() {
  return std::chrono::system_clock::time_point(std::chrono::seconds(1'790'000'000));
}

std::string answer_for(int id) { return id % 3 == 0 ? "yes, for two days" : "no"; }

struct Harness {
  testkit::TempDir dir{"svc"};
  ModelRegistry registry;
  std::unique_ptr<SessionStore> store;
  std::unique_ptr<SessionService> service;

  Harness() {
    registry.publish(std::make_shared<const ModelBundle>(tiny_bundle()));
    reopen();
  }
  void reopen() {
    service.reset();
    store = std::make_unique<SessionStore>(dir / "sessions.jsonl");
    service = std::make_unique<SessionService>(registry, *store, test_users(), fake_interpreter, fixed_clock);
  }
  const User& user(const std::string& id) const { return *service->users().by_id(id); }

  std::string answered_session(const std::string& patient) {
    const auto s = service->create_session(patient);
    for (const auto& q : service->questions()) service->submit_answer(user(patient), s.id, q.id, answer_for(q.id));
    return s.id;
  }
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ServiceError thrown";
  return ErrorCode::Unavailable;
}

}  // namespace

TEST(Errors, HttpStatusMapping) {
  EXPECT_EQ(http_status(ErrorCode::BadRequest), 400);
  EXPECT_EQ(http_status(ErrorCode::Unauthorized), 401);
  EXPECT_EQ(http_status(ErrorCode::Forbidden), 403);
  EXPECT_EQ(http_status(ErrorCode::NotFound), 404);
  EXPECT_EQ(http_status(ErrorCode::Conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::Precondition), 422);
  EXPECT_EQ(http_status(ErrorCode::Unavailable), 503);
}

TEST(Users, ParseAndLookup) {
  const auto u = UserDirectory::parse(R"({"users": [{"id": "a", "email": "a@x", "is_admin": true, "token": "t"}]})");
  ASSERT_NE(u.by_token("t"), nullptr);
  EXPECT_TRUE(u.by_token("t")->is_admin);
  EXPECT_EQ(u.by_token("nope"), nullptr);
  EXPECT_THROW(UserDirectory({{"a", "a@x", false, "t"}, {"b", "b@x", false, "t"}}), ArgumentError);
}

TEST(Store, ReplayKeepsLatestSnapshot) {
  testkit::TempDir dir("store");
  {
    SessionStore s(dir / "log.jsonl");
    Session a{s.next_id(), "p1", "t0", {}, {}, {}, {}, {}};
    s.put(a);
    a.answers.push_back({1, "yes", 1, 0.9, false, "t1"});
    s.put(a);
    s.put({s.next_id(), "p2", "t0", {}, {}, {}, {}, {}});
  }
  SessionStore s(dir / "log.jsonl");
  ASSERT_EQ(s.all().size(), 2u);
  EXPECT_EQ(s.get("s000001")->answers.size(), 1u);
  EXPECT_EQ(s.next_id(), "s000003");
}

TEST(Store, ToleratesTornLastLine) {
  testkit::TempDir dir("store");
  {
    SessionStore s(dir / "log.jsonl");
    s.put({s.next_id(), "p1", "t0", {}, {}, {}, {}, {}});
  }
  std::ofstream(dir / "log.jsonl", std::ios::app) << R"({"id": "s000002", "pat)";
  SessionStore s(dir / "log.jsonl");
  EXPECT_EQ(s.all().size(), 1u);
}

TEST(Store, CompactsSupersededSnapshots) {
  testkit::TempDir dir("store");
  SessionStore s(dir / "log.jsonl");
  Session a{s.next_id(), "p1", "t0", {}, {}, {}, {}, {}};
  for (int i = 0; i < 100; ++i) {
    a.answers.push_back({1, "no " + std::to_string(i), 0, 0.1, false, "t"});
    s.put(a);
  }
  EXPECT_EQ(s.log_lines(), 100u);
  SessionStore reopened(dir / "log.jsonl");
  EXPECT_EQ(reopened.log_lines(), 1u);
  EXPECT_EQ(reopened.get(a.id)->answers.size(), 100u);
  s.put(a);
  s.compact();
  EXPECT_EQ(s.log_lines(), 1u);
}

TEST(Service, FullFlowMatchesDirectScoring) {
  Harness h;
  const auto id = h.answered_session("p1");
  const auto r = h.service->complete_session(h.user("p1"), id);

  const auto bundle = h.registry.current();
  std::vector<std::uint8_t> answers;
  for (const auto& q : h.service->questions()) answers.push_back(answer_for(q.id) == "no" ? 0 : 1);
  const auto prompt = serialize_answers(answers, bundle->schema, bundle->template_kind, bundle->tokenizer);
  const auto direct = microlm::explain(bundle->weights, bundle->adapter_ptr(), prompt);
  EXPECT_EQ(r.risk_score, direct.p_yes);
  EXPECT_EQ(r.predicted_label, direct.predicted_label);
  EXPECT_EQ(r.important_features, top_features(*direct.importance, bundle->schema));
  ASSERT_EQ(r.important_features.size(), 5u);

  // Idempotent.
  const auto again = h.service->complete_session(h.user("p1"), id);
  EXPECT_EQ(again.risk_score, r.risk_score);
  EXPECT_EQ(code_of([&] { h.service->submit_answer(h.user("p1"), id, 1, "yes"); }), ErrorCode::Conflict);
}

TEST(Service, AnswerOrderingAndAmbiguity) {
  Harness h;
  const auto s = h.service->create_session("p1");
  const auto& p1 = h.user("p1");
  EXPECT_EQ(h.service->pending_question(s), 1);
  EXPECT_EQ(code_of([&] { h.service->submit_answer(p1, s.id, 2, "no"); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { h.service->submit_answer(p1, s.id, 1, "   "); }), ErrorCode::BadRequest);
  const auto e = h.service->submit_answer(p1, s.id, 1, "maybe");
  EXPECT_TRUE(e.ambiguous);
  EXPECT_EQ(h.service->pending_question(h.service->get_session(p1, s.id)), 1);
  h.service->submit_answer(p1, s.id, 1, "yes");
  const auto now = h.service->get_session(p1, s.id);
  EXPECT_EQ(h.service->pending_question(now), 2);
  EXPECT_EQ(now.answers.size(), 2u);
  EXPECT_EQ(now.answers[0].answered_at, "2026-09-21T14:13:20.000Z");
  try {
    h.service->complete_session(p1, s.id);
    FAIL();
  } catch (const ServiceError& err) {
    EXPECT_EQ(err.code(), ErrorCode::Precondition);
    EXPECT_NE(std::string(err.what()).find("2,3,4"), std::string::npos);
  }
}

TEST(Service, AccessControl) {
  Harness h;
  const auto id = h.answered_session("p1");
  h.answered_session("p2");
  EXPECT_EQ(code_of([&] { h.service->get_session(h.user("p2"), id); }), ErrorCode::Forbidden);
  EXPECT_EQ(code_of([&] { h.service->complete_session(h.user("p2"), id); }), ErrorCode::Forbidden);
  EXPECT_EQ(code_of([&] { h.service->complete_session(h.user("c1"), id); }), ErrorCode::Forbidden);
  EXPECT_EQ(code_of([&] { h.service->get_session(h.user("p1"), "s999999"); }), ErrorCode::NotFound);
  EXPECT_EQ(code_of([&] { h.service->list_sessions(h.user("p1"), "p2"); }), ErrorCode::Forbidden);
  EXPECT_EQ(code_of([&] { h.service->create_session("c1"); }), ErrorCode::Forbidden);
  EXPECT_NO_THROW(h.service->get_session(h.user("c1"), id));
  EXPECT_EQ(h.service->list_sessions(h.user("p1"), std::nullopt).size(), 1u);
  EXPECT_EQ(h.service->list_sessions(h.user("c1"), std::nullopt).size(), 2u);
  EXPECT_EQ(h.service->list_sessions(h.user("c1"), "p2").size(), 1u);
}

TEST(Service, NoModelIsUnavailable) {
  testkit::TempDir dir("svc");
  ModelRegistry empty;
  SessionStore store;
  SessionService svc(empty, store, test_users(), fake_interpreter);
  EXPECT_EQ(code_of([&] { svc.create_session("p1"); }), ErrorCode::Unavailable);
}

TEST(Service, SessionsSurviveRestart) {
  Harness h;
  const auto id = h.answered_session("p1");
  const auto r = h.service->complete_session(h.user("p1"), id);
  const auto before = to_json(h.service->get_session(h.user("p1"), id)).dump();
  h.reopen();
  EXPECT_EQ(to_json(h.service->get_session(h.user("p1"), id)).dump(), before);
  EXPECT_EQ(h.service->complete_session(h.user("p1"), id).risk_score, r.risk_score);
  EXPECT_EQ(h.service->create_session("p1").id, "s000002");
}

TEST(Service, DefaultInterpreterRuns) {
  const auto b = tiny_bundle();
  const auto i = SessionService::default_interpreter(b, "Has your child had a cough?", "yes, a little");
  EXPECT_GE(i.p_yes, 0.0);
  EXPECT_LE(i.p_yes, 1.0);
  EXPECT_EQ(i.ambiguous, microlm::is_ambiguous(i.p_yes));
}

TEST(TopFeatures, TiesGoToSchemaOrder) {
  const auto schema = default_schema();
  std::vector<double> imp(15, 0.05);
  imp[14] = 0.2;
  imp[3] = 0.1;
  const auto top = top_features(imp, schema, 4);
  ASSERT_EQ(top.size(), 4u);
  EXPECT_EQ(top[0].feature_id, 15);
  EXPECT_EQ(top[1].feature_id, 4);
  EXPECT_EQ(top[2].feature_id, 1);
  EXPECT_EQ(top[3].feature_id, 2);
}

TEST(Registry, BundleRoundTrip) {
  testkit::TempDir dir("bundle");
  const auto b = tiny_bundle(3, TemplateKind::Text);
  save_model_bundle(dir.path(), b);
  const auto loaded = load_model_bundle(dir / "bundle.json");
  EXPECT_TRUE(loaded.weights == b.weights);
  EXPECT_TRUE(*loaded.adapter == *b.adapter);
  EXPECT_EQ(loaded.schema, b.schema);
  EXPECT_EQ(loaded.template_kind, TemplateKind::Text);
}

TEST(Registry, FailedLoadKeepsServingOldModel) {
  testkit::TempDir dir("bundle");
  ModelRegistry reg;
  save_model_bundle(dir.path(), tiny_bundle(4));
  reg.load(dir / "bundle.json");
  const auto old = reg.current();

  write_text_file(dir / "broken.json", "{not json");
  EXPECT_THROW(reg.load(dir / "broken.json"), LoadError);
  EXPECT_EQ(reg.current(), old);

  // A schema with a different width than the weights.
  const auto full = default_schema();
  std::vector<FeatureSpec> f(full.features().begin(), full.features().begin() + 14);
  save_schema(dir / "narrow.tsv", QuestionnaireSchema(f));
  write_text_file(dir / "narrow.json", R"({"weights": "weights.bin", "schema": "narrow.tsv", "template": "list"})");
  try {
    reg.load(dir / "narrow.json");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("schema mismatch"), std::string::npos);
  }
  EXPECT_EQ(reg.current(), old);

  write_text_file(dir / "noweights.json", R"({"template": "list"})");
  EXPECT_THROW(reg.load(dir / "noweights.json"), LoadError);
  EXPECT_EQ(reg.current(), old);
}

TEST(Address, Parse) {
  EXPECT_EQ(parse_address("127.0.0.1:8080"), std::make_pair(std::string("127.0.0.1"), 8080));
  EXPECT_THROW(parse_address("localhost"), ArgumentError);
  EXPECT_THROW(parse_address("h:99999"), ArgumentError);
}

namespace {

struct LiveServer {
  Harness h;
  std::unique_ptr<HttpServer> server;
  std::thread thread;
  int port = 0;

  LiveServer() { start(); }
  ~LiveServer() { stop(); }
  void start() {
    server = std::make_unique<HttpServer>(*h.service);
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->serve(); });
    server->wait_until_ready();
  }
  void stop() {
    if (!server) return;
    server->stop();
    thread.join();
    server.reset();
  }
  httplib::Client client(const std::string& token = "") const {
    httplib::Client c("127.0.0.1", port);
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }
};

}  // namespace

TEST(Http, EndToEnd) {
  LiveServer live;
  auto anon = live.client();
  auto health = anon.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["d"], 15);
  EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(anon.Get("/questions")->status, 401);
  EXPECT_EQ(live.client("bogus").Get("/questions")->status, 401);

  auto p1 = live.client("tok-p1");
  auto created = p1.Post("/sessions", "", "application/json");
  ASSERT_EQ(created->status, 201);
  const auto body = json::parse(created->body);
  const std::string id = body["session"]["id"];
  EXPECT_EQ(body["questions"].size(), 15u);
  EXPECT_EQ(body["pending_question_id"], 1);

  EXPECT_EQ(p1.Post("/sessions/" + id + "/answers", "{", "application/json")->status, 400);
  EXPECT_EQ(p1.Post("/sessions/" + id + "/answers", R"({"question_id": 2, "text": "no"})", "application/json")->status, 409);
  EXPECT_EQ(p1.Post("/sessions/" + id + "/complete", "", "application/json")->status, 422);
  EXPECT_EQ(live.client("tok-p2").Get("/sessions/" + id)->status, 403);
  EXPECT_EQ(p1.Get("/sessions/s424242")->status, 404);

  for (int q = 1; q <= 15; ++q) {
    const auto r = p1.Post("/sessions/" + id + "/answers", json{{"question_id", q}, {"text", answer_for(q)}}.dump(),
                           "application/json");
    ASSERT_EQ(r->status, 200) << r->body;
    const auto j = json::parse(r->body);
    EXPECT_EQ(j["answer"]["answer"], answer_for(q) == "no" ? 0 : 1);
    if (q < 15) EXPECT_EQ(j["pending_question_id"], q + 1);
    else EXPECT_TRUE(j["pending_question_id"].is_null());
  }
  const auto done = p1.Post("/sessions/" + id + "/complete", "", "application/json");
  ASSERT_EQ(done->status, 200) << done->body;
  const auto result = json::parse(done->body);
  const auto direct = live.h.service->complete_session(live.h.user("p1"), id);
  EXPECT_EQ(result["risk_score"].get<double>(), direct.risk_score);
  EXPECT_EQ(result["important_features"].size(), 5u);

  auto listing = json::parse(live.client("tok-c1").Get("/sessions")->body);
  ASSERT_EQ(listing["groups"].size(), 1u);
  EXPECT_EQ(listing["groups"][0]["patient_id"], "p1");
  EXPECT_EQ(live.client("tok-p2").Get("/sessions?patient_id=p1")->status, 403);
  EXPECT_EQ(live.client("tok-c1").Post("/sessions", "", "application/json")->status, 403);

  const auto before = p1.Get("/sessions/" + id)->body;
  live.stop();
  live.h.reopen();
  live.start();
  EXPECT_EQ(live.client("tok-p1").Get("/sessions/" + id)->body, before);
}
