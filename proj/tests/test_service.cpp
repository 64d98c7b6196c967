#include <gtest/gtest.h>

#include <thread>

#include "crs/service.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace crs;

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new testutil::TempDir;
    const auto paths = fixtures::synth(dir->file("data"), 40, 9);
    cfg = fixtures::tiny_config(paths);
    data = new Dataset(load_dataset(cfg.data, cfg.max_context_len));
    model = fixtures::make_model(cfg, *data).release();
    cfg.train.epochs = 2;
    Trainer(*model, cfg.train).fit(data->train, {});
  }
  static void TearDownTestSuite() {
    delete model;
    delete data;
    delete dir;
  }

  ServiceOptions options() const {
    ServiceOptions o;
    o.decode = cfg.decode;
    o.decode.max_new_tokens = 8;
    return o;
  }

  // An item whose display name is linkable through the alias index.
  static std::string some_item() { return model->catalog().items.begin()->first; }

  static inline testutil::TempDir* dir = nullptr;
  static inline RunConfig cfg;
  static inline Dataset* data = nullptr;
  static inline CrsModel* model = nullptr;
};

TEST_F(ServiceTest, NewSessionIsEmptyAndIdsAreUnique) {
  SessionService svc(*model, options());
  const auto a = svc.create_session(), b = svc.create_session();
  EXPECT_NE(a, b);
  const auto s = svc.get_session(a);
  EXPECT_EQ(s["id"], a);
  EXPECT_TRUE(s["messages"].empty());
  EXPECT_TRUE(s["entity_history"].empty());
  EXPECT_EQ(svc.size(), 2u);
}

TEST_F(ServiceTest, ColdStartTurnUsesContextBranch) {
  SessionService svc(*model, options());
  const auto id = svc.create_session();
  const auto r = svc.post_message(id, "hello there, can you suggest something?");
  EXPECT_EQ(r["debug"]["branch"], "context_only");
  EXPECT_EQ(r["debug"]["history_length"], 0);
  EXPECT_EQ(r["ranked_items"].size(), 10u);
  double prev = 1.0;
  for (const auto& it : r["ranked_items"]) {
    EXPECT_LE(it["prob"].get<double>(), prev);
    prev = it["prob"].get<double>();
  }
}

TEST_F(ServiceTest, MentionedItemEntersHistoryWithNormalizedWeights) {
  SessionService svc(*model, options());
  const auto id = svc.create_session();
  const std::string item = some_item();
  svc.post_message(id, "hi");
  const auto r = svc.post_message(id, "I really liked @" + item);
  EXPECT_EQ(r["debug"]["branch"], "fused");
  const auto& hist = r["entity_history"];
  ASSERT_FALSE(hist.empty());
  bool found = false;
  double total = 0.0;
  for (const auto& h : hist) {
    total += h["weight"].get<double>();
    if (h.contains("item_id") && h["item_id"] == item) found = true;
  }
  EXPECT_TRUE(found);
  EXPECT_NEAR(total, 1.0, 1e-9);
  const auto s = svc.get_session(id);
  ASSERT_EQ(s["messages"].size(), 4u);
  EXPECT_EQ(s["messages"][2]["role"], "seeker");
  EXPECT_EQ(s["messages"][2]["item_mentions"][0], item);
}

TEST_F(ServiceTest, SameTranscriptSameReplies) {
  SessionService a(*model, options()), b(*model, options());
  const auto ia = a.create_session(), ib = b.create_session();
  for (const std::string& msg : std::vector<std::string>{"hi", "I liked @" + some_item(), "something newer?"}) {
    const auto ra = a.post_message(ia, msg), rb = b.post_message(ib, msg);
    EXPECT_EQ(ra["response_text"], rb["response_text"]);
    EXPECT_EQ(ra["ranked_items"], rb["ranked_items"]);
  }
}

TEST_F(ServiceTest, ErrorsAndCapacity) {
  auto o = options();
  o.max_sessions = 1;
  SessionService svc(*model, o);
  const auto id = svc.create_session();
  EXPECT_THROW(svc.create_session(), CapacityError);
  EXPECT_THROW(svc.post_message(id, "  \n"), ValidationError);
  EXPECT_THROW(svc.post_message("nope", "hi"), NotFoundError);
  EXPECT_THROW(svc.get_session("nope"), NotFoundError);
}

TEST_F(ServiceTest, JournalRestoresSessionsAfterRestart) {
  auto o = options();
  o.journal_path = dir->file("sessions.jsonl");
  std::string id;
  nlohmann::json before;
  {
    SessionService svc(*model, o);
    id = svc.create_session();
    svc.post_message(id, "I liked @" + some_item());
    before = svc.get_session(id);
  }
  SessionService again(*model, o);
  const auto after = again.get_session(id);
  EXPECT_EQ(after["messages"], before["messages"]);
  EXPECT_EQ(after["ranked_items"], before["ranked_items"]);
  EXPECT_EQ(after["entity_history"], before["entity_history"]);
  again.post_message(id, "anything else?");
  EXPECT_EQ(again.get_session(id)["messages"].size(), 4u);
}

TEST_F(ServiceTest, ConcurrentSessionsDoNotInterfere) {
  SessionService svc(*model, options());
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(svc.create_session());
  std::vector<std::thread> threads;
  for (const auto& id : ids)
    threads.emplace_back([&svc, id] {
      for (int t = 0; t < 3; ++t) svc.post_message(id, "turn " + std::to_string(t));
    });
  for (auto& t : threads) t.join();
  for (const auto& id : ids) EXPECT_EQ(svc.get_session(id)["messages"].size(), 6u);
}

TEST_F(ServiceTest, HttpRoutesAndStatusCodes) {
  auto o = options();
  o.max_sessions = 1;
  SessionService svc(*model, o);
  httplib::Server server;
  register_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(nlohmann::json::parse(health->body)["status"], "ok");

  auto created = cli.Post("/api/sessions", "", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const std::string id = nlohmann::json::parse(created->body)["id"];
  EXPECT_EQ(cli.Post("/api/sessions", "", "application/json")->status, 429);

  auto msg = cli.Post("/api/sessions/" + id + "/messages", R"({"text": "hello"})", "application/json");
  ASSERT_TRUE(msg);
  EXPECT_EQ(msg->status, 200);
  EXPECT_TRUE(nlohmann::json::parse(msg->body).contains("response_text"));
  EXPECT_EQ(cli.Post("/api/sessions/" + id + "/messages", R"({"text": ""})", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/api/sessions/" + id + "/messages", "not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/api/sessions/missing/messages", R"({"text": "x"})", "application/json")->status, 404);
  auto missing = cli.Get("/api/sessions/missing");
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(nlohmann::json::parse(missing->body).contains("error"));
  EXPECT_EQ(cli.Get("/api/sessions/" + id)->status, 200);

  server.stop();
  th.join();
}
