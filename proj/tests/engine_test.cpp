#include <gtest/gtest.h>

#include <memory>
#include <string>
#include <vector>

#include "qsmash/engine.hpp"

namespace qsmash {
namespace {

const std::string kScenarios = QSMASH_SCENARIO_DIR;

// Vacation-call world with a configurable oracle and epsilon.
std::shared_ptr<const Scenario> phone_scenario(double epsilon0, const json& oracle, int steps = 1, int episodes = 1) {
  auto j = json::parse(R"({
    "name": "phone",
    "devices": {"phone": ["idle", "ringing", "accepted", "declined"], "user": ["at_home", "on_vacation"]},
    "rules": [
      {"match": {"phone": "ringing", "user": "on_vacation"}, "next": {"phone": "declined"}, "priority": 2},
      {"match": {"phone": "ringing"}, "next": {"phone": "accepted"}, "priority": 1},
      {"match": {}, "next": {"phone": "idle"}, "priority": 0}
    ],
    "initial_state": {"phone": "ringing", "user": "on_vacation"},
    "seed": 11
  })");
  j["oracle"] = oracle;
  j["steps_per_episode"] = steps;
  j["episodes"] = episodes;
  j["params"] = {{"epsilon0", epsilon0}};
  return std::make_shared<const Scenario>(parse_scenario(j));
}

const json kFollowPlan = json::parse(R"({"type": "scripted", "default": "plan"})");
const json kDiverge = json::parse(R"({"type": "scripted", "default": "plan",
  "preferences": [{"match": {"phone": "ringing", "user": "on_vacation"}, "action": "phone:accepted"}]})");

TEST(RunEpisode, ForcedPlanStep) {
  Engine engine(phone_scenario(0.0, kFollowPlan));
  const auto trace = engine.run_episode();
  ASSERT_EQ(trace.steps.size(), 1u);
  const auto& step = trace.steps[0];
  EXPECT_EQ(step.decision.source, DecisionSource::Plan);
  ASSERT_EQ(step.updates.size(), 1u);
  EXPECT_EQ(step.updates[0].reward, 1.0);
  EXPECT_EQ(step.executed_action().name(), "phone:declined");
  EXPECT_TRUE(engine.finished());
}

TEST(RunEpisode, PredictionMatchingPlan) {
  Engine engine(phone_scenario(1.0, kFollowPlan));
  const auto trace = engine.run_episode();
  ASSERT_EQ(trace.steps[0].updates.size(), 1u);
  EXPECT_EQ(trace.steps[0].decision.source, DecisionSource::Prediction);
  EXPECT_EQ(trace.steps[0].updates[0].reward, 5.0);
}

TEST(RunEpisode, DivergentPredictionExecutesUserChoice) {
  Engine engine(phone_scenario(1.0, kDiverge));
  const auto trace = engine.run_episode();
  const auto& step = trace.steps[0];
  ASSERT_EQ(step.updates.size(), 2u);
  const auto& vocab = engine.qtable().vocabulary();
  EXPECT_EQ(vocab.actions()[step.updates[0].action_index].name(), "phone:declined");
  EXPECT_EQ(step.updates[0].reward, -5.0);
  EXPECT_EQ(vocab.actions()[step.updates[1].action_index].name(), "phone:accepted");
  EXPECT_EQ(step.updates[1].reward, 5.0);
  EXPECT_EQ(step.executed_action().name(), "phone:accepted");
  EXPECT_EQ(step.next_state.at("phone"), "accepted");
  // The plan action's update looks ahead from its own hypothetical successor.
  EXPECT_EQ(step.updates[0].next_state.at("phone"), "declined");
  EXPECT_EQ(step.updates[1].next_state, step.next_state);
}

TEST(RunEpisode, TraceChainsAndResetsEachEpisode) {
  const auto sc = load_scenario(kScenarios + "/evening_routine.json");
  const auto result = run_training(sc);
  ASSERT_EQ(result.traces.size(), static_cast<std::size_t>(sc.episodes));
  for (const auto& trace : result.traces) {
    ASSERT_EQ(trace.steps.size(), static_cast<std::size_t>(sc.steps_per_episode));
    EXPECT_EQ(trace.steps.front().state(), sc.initial_state);
    for (std::size_t i = 0; i < trace.steps.size(); ++i) {
      const auto& s = trace.steps[i];
      EXPECT_EQ(s.next_state, apply_action(sc.space, s.state(), s.executed_action()));
      if (i + 1 < trace.steps.size()) {
        EXPECT_EQ(trace.steps[i + 1].state(), s.next_state);
      }
    }
  }
}

TEST(RunEpisode, AllPlanEpisodeRewardIsStepsTimesPlanReward) {
  Engine engine(phone_scenario(0.0, kDiverge, 7, 1));
  const auto trace = engine.run_episode();
  EXPECT_EQ(trace.cumulative_reward(), 7.0);
  const auto report = engine.report();
  EXPECT_EQ(report.cumulative_reward.at(0), 7.0);
  // Visited: ringing (misaligned, plan only), declined and idle (aligned).
  ASSERT_TRUE(report.alignment_rate.at(0).has_value());
  EXPECT_DOUBLE_EQ(*report.alignment_rate[0], 2.0 / 3.0);
}

TEST(RunEpisode, OracleGapReportsStepContext) {
  const auto oracle = json::parse(R"({"type": "scripted", "preferences": [{"match": {"phone": "idle"}, "action": "noop"}]})");
  Engine engine(phone_scenario(1.0, oracle, 3));
  try {
    engine.step();
    FAIL() << "expected a configuration error";
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find("episode 0 step 0"), std::string::npos) << e.what();
  }
}

TEST(RunEpisode, TerminalStateEndsEpisodeEarly) {
  auto j = json::parse(R"({
    "name": "terminal",
    "devices": {"door": ["open", "ajar", "shut"]},
    "rules": [
      {"match": {"door": "open"}, "next": {"door": "ajar"}},
      {"match": {"door": "ajar"}, "next": {"door": "shut"}}
    ],
    "oracle": {"type": "greedy"},
    "initial_state": {"door": "open"},
    "terminal_states": [{"door": "shut"}],
    "steps_per_episode": 10,
    "episodes": 3,
    "params": {"epsilon0": 0.0}
  })");
  const auto result = run_training(parse_scenario(j));
  for (const auto& t : result.traces) {
    EXPECT_EQ(t.steps.size(), 2u);
  }
  const auto shut_row = result.qtable.row(2);
  for (const double v : shut_row) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(RunEpisode, CollaborativeNeedsChannel) {
  EXPECT_THROW(Engine(phone_scenario(0.5, json{{"type", "collaborative"}})), ValidationError);
}

TEST(RunTraining, EpsilonAdvancesPerEpisode) {
  Engine engine(phone_scenario(0.1, kDiverge, 2, 4));
  engine.run_to_end();
  const auto& traces = engine.traces();
  ASSERT_EQ(traces.size(), 4u);
  double eps = 0.1;
  for (const auto& t : traces) {
    EXPECT_DOUBLE_EQ(t.epsilon, eps);
    eps = 1.0 - (1.0 - eps) * 0.9;
  }
  EXPECT_DOUBLE_EQ(engine.report().final_epsilon, eps);
  EXPECT_THROW(engine.step(), RuntimeError);
}

TEST(RunTraining, EventsFollowCausalOrder) {
  std::vector<std::pair<EventKind, json>> events;
  Engine engine(phone_scenario(0.5, kDiverge, 4, 6), nullptr,
                [&](EventKind k, json p) { events.emplace_back(k, std::move(p)); });
  engine.run_to_end();

  std::size_t i = 0;
  int steps = 0;
  int episodes = 0;
  while (i < events.size()) {
    const auto kind = events[i].first;
    if (kind == EventKind::DecisionMade) {
      ++i;
      int updates = 0;
      while (i < events.size() && events[i].first == EventKind::QUpdated) {
        ++updates;
        ++i;
      }
      EXPECT_GE(updates, 1);
      EXPECT_LE(updates, 2);
      ASSERT_LT(i, events.size());
      EXPECT_EQ(events[i].first, EventKind::StateChanged);
      ++i;
      ++steps;
    } else if (kind == EventKind::EpisodeCompleted) {
      ++episodes;
      ++i;
    } else {
      // Episode reset or the final summary.
      EXPECT_TRUE(kind == EventKind::RunCompleted || events[i].second.value("reset", false));
      ++i;
    }
  }
  EXPECT_EQ(steps, 24);
  EXPECT_EQ(episodes, 6);
  EXPECT_EQ(events.back().first, EventKind::RunCompleted);
}

TEST(RunTraining, LiveAlignmentAgreesWithTraceMetrics) {
  std::vector<json> completed;
  auto sc = std::make_shared<const Scenario>(load_scenario(kScenarios + "/vacation_phone.json"));
  Engine engine(sc, nullptr, [&](EventKind k, json p) {
    if (k == EventKind::EpisodeCompleted) completed.push_back(std::move(p));
  });
  engine.run_to_end();
  const auto report = compute_metrics(engine.traces(), *sc);
  ASSERT_EQ(completed.size(), report.alignment_rate.size());
  for (std::size_t e = 0; e < completed.size(); ++e) {
    EXPECT_EQ(completed[e]["alignment_rate"].get<double>(), *report.alignment_rate[e]);
    EXPECT_EQ(completed[e]["cumulative_reward"].get<double>(), report.cumulative_reward[e]);
  }
  EXPECT_THROW(compute_metrics({}, *sc), RuntimeError);
}

TEST(RunTraining, NonScriptedOraclesHaveNoAlignment) {
  const auto result = run_training(load_scenario(kScenarios + "/greedy_explorer.json"));
  for (const auto& rate : result.report.alignment_rate) {
    EXPECT_FALSE(rate.has_value());
  }
  EXPECT_FALSE(result.report.convergence_episode.has_value());
}

TEST(RunTraining, OverrideConvergesAcrossSeeds) {
  auto base = load_scenario(kScenarios + "/vacation_phone.json");
  const auto divergent = JointState{{{"phone", "ringing"}, {"user", "on_vacation"}}};
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    auto sc = base;
    sc.seed = seed;
    const auto result = run_training(sc);
    ASSERT_TRUE(result.report.convergence_episode.has_value()) << "seed " << seed;
    EXPECT_LT(*result.report.convergence_episode, 30) << "seed " << seed;
    EXPECT_EQ(greedy_action(result.qtable, divergent).name(), "phone:accepted") << "seed " << seed;
  }
}

TEST(ConvergenceEpisode, FirstOfTheFinalRunOfOnes) {
  using R = std::vector<std::optional<double>>;
  EXPECT_EQ(convergence_episode(R{0.5, 1.0, 0.5, 1.0, 1.0}), 3);
  EXPECT_EQ(convergence_episode(R{1.0, 1.0}), 0);
  EXPECT_FALSE(convergence_episode(R{1.0, 0.5}).has_value());
  EXPECT_FALSE(convergence_episode(R{std::nullopt}).has_value());
}

}  // namespace
}  // namespace qsmash
