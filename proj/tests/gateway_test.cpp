#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qsmash/gateway.hpp"

namespace qsmash {
namespace {

using namespace std::chrono_literals;

const std::string kScenarios = QSMASH_SCENARIO_DIR;

std::shared_ptr<const Scenario> phone(const json& oracle, double epsilon0, int steps = 3, int episodes = 2) {
  auto j = json::parse(R"({
    "name": "phone",
    "devices": {"phone": ["idle", "ringing", "accepted", "declined"], "user": ["at_home", "on_vacation"]},
    "rules": [
      {"match": {"phone": "ringing", "user": "on_vacation"}, "next": {"phone": "declined"}, "priority": 2},
      {"match": {"phone": "ringing"}, "next": {"phone": "accepted"}, "priority": 1},
      {"match": {}, "next": {"phone": "idle"}, "priority": 0}
    ],
    "initial_state": {"phone": "ringing", "user": "on_vacation"},
    "seed": 5
  })");
  j["oracle"] = oracle;
  j["steps_per_episode"] = steps;
  j["episodes"] = episodes;
  j["params"] = {{"epsilon0", epsilon0}};
  return std::make_shared<const Scenario>(parse_scenario(j));
}

json collaborative(int timeout_ms) { return {{"type", "collaborative"}, {"timeout_ms", timeout_ms}}; }

const json kFollowPlan = json::parse(R"({"type": "scripted", "default": "plan"})");

struct Served {
  explicit Served(std::shared_ptr<const Scenario> sc) : gateway(std::move(sc)) {
    gateway.bind("127.0.0.1", 0);
    gateway.start_background();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", gateway.port());
    c.set_read_timeout(20, 0);
    return c;
  }

  json get(const std::string& path) const {
    auto c = client();
    auto res = c.Get(path);
    EXPECT_TRUE(res) << path;
    EXPECT_EQ(res->status, 200) << path << " " << res->body;
    return json::parse(res->body);
  }

  httplib::Result post(const std::string& path, const json& body) const {
    auto c = client();
    return c.Post(path, body.dump(), "application/json");
  }

  std::vector<json> events(const std::string& query = "") const {
    auto c = client();
    auto res = c.Get("/api/events" + query);
    EXPECT_TRUE(res);
    std::vector<json> out;
    std::istringstream lines(res->body);
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) {
        out.push_back(json::parse(line));
      }
    }
    return out;
  }

  // Polls run status until `phase` or a deadline.
  json wait_for_phase(const std::string& phase) const {
    const auto deadline = std::chrono::steady_clock::now() + 10s;
    json status;
    while (std::chrono::steady_clock::now() < deadline) {
      status = get("/api/run/status");
      if (status["phase"] == phase) {
        return status;
      }
      std::this_thread::sleep_for(5ms);
    }
    ADD_FAILURE() << "phase never became " << phase << ", last status " << status.dump();
    return status;
  }

  Gateway gateway;
};

std::vector<std::string> kinds(const json& events) {
  std::vector<std::string> out;
  for (const auto& e : events) {
    out.push_back(e["kind"].get<std::string>());
  }
  return out;
}

TEST(Gateway, FreshEngineServesInitialStateAndZeroTable) {
  Served s(phone(kFollowPlan, 0.1));
  const auto state = s.get("/api/state");
  EXPECT_EQ(state["state"], json({{"phone", "ringing"}, {"user", "on_vacation"}}));
  EXPECT_EQ(state["step"], 0);
  EXPECT_EQ(state["episode"], 0);
  EXPECT_EQ(state["epsilon"], 0.1);

  const auto q = s.get("/api/qtable");
  ASSERT_EQ(q["states"].size(), 8u);
  EXPECT_EQ(q["states"][0], "phone=idle,user=at_home");
  EXPECT_EQ(q["states"][7], "phone=declined,user=on_vacation");
  EXPECT_EQ(q["actions"][0], "noop");
  ASSERT_EQ(q["values"].size(), 8u);
  for (const auto& row : q["values"]) {
    ASSERT_EQ(row.size(), q["actions"].size());
    for (const auto& v : row) {
      EXPECT_EQ(v.get<double>(), 0.0);
    }
  }
  EXPECT_EQ(s.get("/api/run/status")["phase"], "idle");
  EXPECT_EQ(s.gateway.events().size(), 0u);
}

TEST(Gateway, StartContract) {
  Served s(phone(kFollowPlan, 0.1));
  EXPECT_EQ(s.post("/api/run/start", {{"mode", "sideways"}})->status, 422);
  auto c = s.client();
  EXPECT_EQ(c.Post("/api/run/start", "{not json", "application/json")->status, 400);
  EXPECT_EQ(s.post("/api/run/step", json::object())->status, 409);  // not started

  EXPECT_EQ(s.post("/api/run/start", {{"mode", "manual"}})->status, 200);
  EXPECT_EQ(s.post("/api/run/start", {{"mode", "manual"}})->status, 409);
  EXPECT_EQ(s.post("/api/run/start", {{"mode", "auto"}})->status, 409);
  const auto status = s.get("/api/run/status");
  EXPECT_EQ(status["phase"], "running");
  EXPECT_EQ(status["mode"], "manual");
}

TEST(Gateway, ManualStepReturnsCausallyOrderedEvents) {
  Served s(phone(kFollowPlan, 0.0, 2, 2));
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "manual"}})->status, 200);

  auto res = s.post("/api/run/step", json::object());
  ASSERT_EQ(res->status, 200) << res->body;
  const auto first = json::parse(res->body);
  EXPECT_EQ(kinds(first), (std::vector<std::string>{"decision_made", "q_updated", "state_changed"}));
  EXPECT_EQ(first[0]["seq"], 0);
  EXPECT_EQ(first[0]["payload"]["source"], "plan");
  EXPECT_EQ(first[1]["payload"]["action"], "phone:declined");
  EXPECT_EQ(first[1]["payload"]["reward"], 1.0);
  EXPECT_EQ(first[2]["payload"]["state"]["phone"], "declined");

  // Pull endpoints reflect the step.
  EXPECT_EQ(s.get("/api/state")["state"]["phone"], "declined");
  EXPECT_EQ(s.get("/api/state")["step"], 1);

  // Second step closes episode 0: completion then the reset to the initial state.
  const auto second = json::parse(s.post("/api/run/step", json::object())->body);
  EXPECT_EQ(kinds(second), (std::vector<std::string>{"decision_made", "q_updated", "state_changed", "episode_completed",
                                                     "state_changed"}));
  EXPECT_EQ(second[0]["seq"], 3);
  EXPECT_TRUE(second[4]["payload"]["reset"].get<bool>());
  EXPECT_EQ(s.get("/api/state")["episode"], 1);

  s.post("/api/run/step", json::object());
  const auto last = json::parse(s.post("/api/run/step", json::object())->body);
  EXPECT_EQ(last.back()["kind"], "run_completed");
  EXPECT_EQ(s.get("/api/run/status")["phase"], "done");
  EXPECT_EQ(s.post("/api/run/step", json::object())->status, 409);
}

TEST(Gateway, DivergentFeedbackRoundTrip) {
  Served s(phone(collaborative(20000), 1.0));
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "manual"}})->status, 200);
  auto step = std::async(std::launch::async, [&] { return s.post("/api/run/step", json::object()); });

  const auto status = s.wait_for_phase("waiting_feedback");
  ASSERT_TRUE(status.contains("pending_feedback"));
  const auto request = status["pending_feedback"];
  EXPECT_EQ(request["state"], json({{"phone", "ringing"}, {"user", "on_vacation"}}));
  EXPECT_EQ(request["plan_action"], "phone:declined");
  EXPECT_EQ(request["actions"][0], "noop");
  EXPECT_GT(request["deadline"].get<std::int64_t>(), unix_millis(std::chrono::system_clock::now()));
  const auto id = request["request_id"].get<std::uint64_t>();

  // Nothing is learned while the request is open.
  EXPECT_EQ(kinds(s.events("?follow=false")), (std::vector<std::string>{"decision_made", "feedback_requested"}));

  EXPECT_EQ(s.post("/api/feedback", {{"request_id", id + 7}, {"action", "phone:accepted"}})->status, 404);
  EXPECT_EQ(s.post("/api/feedback", {{"request_id", id}, {"action", "fan:on"}})->status, 422);
  EXPECT_EQ(s.post("/api/feedback", {{"request_id", "x"}, {"action", "noop"}})->status, 400);
  EXPECT_EQ(s.get("/api/run/status")["phase"], "waiting_feedback");  // still pending after the bad answer

  EXPECT_EQ(s.post("/api/feedback", {{"request_id", id}, {"action", "phone:accepted"}})->status, 200);
  const auto res = step.get();
  ASSERT_EQ(res->status, 200) << res->body;
  const auto events = json::parse(res->body);
  EXPECT_EQ(kinds(events), (std::vector<std::string>{"decision_made", "feedback_requested", "feedback_resolved",
                                                     "q_updated", "q_updated", "state_changed"}));
  EXPECT_EQ(events[2]["payload"]["action"], "phone:accepted");
  EXPECT_FALSE(events[2]["payload"]["timed_out"].get<bool>());
  EXPECT_EQ(events[3]["payload"]["action"], "phone:declined");
  EXPECT_EQ(events[3]["payload"]["reward"], -5.0);
  EXPECT_EQ(events[4]["payload"]["action"], "phone:accepted");
  EXPECT_EQ(events[4]["payload"]["reward"], 5.0);
  EXPECT_EQ(events[5]["payload"]["action"], "phone:accepted");
  EXPECT_EQ(events[5]["payload"]["state"]["phone"], "accepted");

  EXPECT_EQ(s.post("/api/feedback", {{"request_id", id}, {"action", "phone:accepted"}})->status, 410);
  EXPECT_EQ(s.get("/api/run/status")["phase"], "running");
}

TEST(Gateway, ExpiredFeedbackFallsBackToPlan) {
  Served s(phone(collaborative(50), 1.0));
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "manual"}})->status, 200);
  auto res = s.post("/api/run/step", json::object());
  ASSERT_EQ(res->status, 200);
  const auto events = json::parse(res->body);
  EXPECT_EQ(kinds(events), (std::vector<std::string>{"decision_made", "feedback_requested", "feedback_resolved",
                                                     "q_updated", "state_changed"}));
  EXPECT_TRUE(events[2]["payload"]["timed_out"].get<bool>());
  EXPECT_TRUE(events[2]["payload"]["action"].is_null());
  EXPECT_EQ(events[3]["payload"]["action"], "phone:declined");
  EXPECT_EQ(events[3]["payload"]["reward"], 1.0);
  EXPECT_TRUE(events[4]["payload"]["fell_back"].get<bool>());
  const auto id = events[1]["payload"]["request"]["request_id"].get<std::uint64_t>();
  EXPECT_EQ(s.post("/api/feedback", {{"request_id", id}, {"action", "phone:accepted"}})->status, 410);
}

TEST(Gateway, EventLogReplaysToServedQTable) {
  const auto sc = std::make_shared<const Scenario>(load_scenario(kScenarios + "/vacation_phone.json"));
  Served s(sc);
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "auto"}})->status, 200);
  const auto log = s.events();  // follows until run_completed
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log.back()["kind"], "run_completed");
  for (std::size_t i = 0; i < log.size(); ++i) {
    ASSERT_EQ(log[i]["seq"], i);
  }
  EXPECT_EQ(s.wait_for_phase("done")["mode"], "auto");

  // Recompute every update from the logged inputs, then compare with the served table.
  QTable q(sc->space, sc->vocabulary);
  int updates = 0;
  for (const auto& e : log) {
    if (e["kind"] != "q_updated") continue;
    const auto& p = e["payload"];
    const auto u = q_update(q,
                            {state_from_json(p["state"], sc->space, "event"), ActionRecord::parse(p["action"].get<std::string>()),
                             p["reward"].get<double>()},
                            sc->params);
    ASSERT_EQ(u.after, p["after"].get<double>()) << e.dump();
    ++updates;
  }
  EXPECT_GT(updates, sc->episodes * sc->steps_per_episode - 1);
  const auto served = s.get("/api/qtable");
  for (std::size_t r = 0; r < q.rows(); ++r) {
    for (std::size_t c = 0; c < q.cols(); ++c) {
      EXPECT_EQ(served["values"][r][c].get<double>(), q.at(r, c));
    }
  }
  EXPECT_EQ(q, run_training(sc).qtable);

  // Late subscribers replay from any sequence number.
  const auto tail = s.events("?from=10&follow=false");
  ASSERT_EQ(tail.size(), log.size() - 10);
  EXPECT_EQ(tail.front(), log[10]);
  EXPECT_EQ(s.client().Get("/api/events?from=abc")->status, 400);
}

TEST(Gateway, ConcurrentSubscribersSeeTheSameLog) {
  const auto sc = std::make_shared<const Scenario>(load_scenario(kScenarios + "/evening_routine.json"));
  Served s(sc);
  auto a = std::async(std::launch::async, [&] { return s.events("?from=0"); });
  auto b = std::async(std::launch::async, [&] { return s.events("?from=0"); });
  std::this_thread::sleep_for(50ms);
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "auto"}})->status, 200);
  const auto la = a.get();
  const auto lb = b.get();
  EXPECT_EQ(la, lb);
  ASSERT_FALSE(la.empty());
  EXPECT_EQ(la.back()["kind"], "run_completed");
  EXPECT_EQ(la.size(), s.gateway.events().size());
}

TEST(Gateway, ServerSentEventsFraming) {
  Served s(phone(kFollowPlan, 0.0, 1, 1));
  ASSERT_EQ(s.post("/api/run/start", {{"mode", "auto"}})->status, 200);
  auto c = s.client();
  auto res = c.Get("/api/events", httplib::Headers{{"Accept", "text/event-stream"}});
  ASSERT_TRUE(res);
  EXPECT_NE(res->get_header_value("Content-Type").find("text/event-stream"), std::string::npos);
  EXPECT_EQ(res->body.rfind("id: 0\nevent: decision_made\ndata: {", 0), 0u) << res->body;
  EXPECT_NE(res->body.find("event: run_completed\n"), std::string::npos);
  EXPECT_EQ(res->body.substr(res->body.size() - 2), "\n\n");
}

TEST(Gateway, BindFailureIsReported) {
  Served s(phone(kFollowPlan, 0.1));
  Gateway other(phone(kFollowPlan, 0.1));
  EXPECT_THROW(other.bind("127.0.0.1", s.gateway.port()), RuntimeError);
}

TEST(Gateway, StopWhileWaitingForFeedback) {
  auto s = std::make_unique<Served>(phone(collaborative(60000), 1.0));
  ASSERT_EQ(s->post("/api/run/start", {{"mode", "auto"}})->status, 200);
  s->wait_for_phase("waiting_feedback");
  const auto start = std::chrono::steady_clock::now();
  s->gateway.stop();
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

}  // namespace
}  // namespace qsmash
