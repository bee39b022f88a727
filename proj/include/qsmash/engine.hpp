#pragma once

// Episode execution. One Engine owns the Q-table, the random stream and the
// epsilon schedule for a scenario and advances them one step at a time:
//
//   plan_for -> decide -> reward -> q_update (per event) -> S <- S'
//
// Every episode restarts from the scenario's initial state and runs a fixed
// number of steps (fewer if a terminal state is reached). Epsilon is updated
// once per finished episode.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qsmash/errors.hpp"
#include "qsmash/learning.hpp"
#include "qsmash/planner.hpp"
#include "qsmash/rng.hpp"
#include "qsmash/scenario.hpp"
#include "qsmash/world.hpp"

namespace qsmash {

struct StepRecord {
  int step = 0;
  Decision decision;
  std::vector<QUpdate> updates;  // one per reward event, in reward order
  JointState next_state;

  const JointState& state() const { return decision.state; }
  const ActionRecord& executed_action() const { return decision.chosen_action; }

  double reward_total() const {
    double total = 0.0;
    for (const auto& u : updates) {
      total += u.reward;
    }
    return total;
  }
};

struct EpisodeTrace {
  int episode = 0;
  double epsilon = 0.0;
  std::vector<StepRecord> steps;

  double cumulative_reward() const {
    double total = 0.0;
    for (const auto& s : steps) {
      total += s.reward_total();
    }
    return total;
  }
};

struct TrainingReport {
  std::string scenario;
  std::vector<double> cumulative_reward;
  // Fraction of visited states whose greedy action equals the scripted
  // preference at the end of each episode. Empty entries for other oracles.
  std::vector<std::optional<double>> alignment_rate;
  // First (0-based) episode from which the alignment rate stays at 1.0.
  std::optional<int> convergence_episode;
  double final_epsilon = 0.0;
};

struct TrainingResult {
  TrainingReport report;
  QTable qtable;
  std::vector<EpisodeTrace> traces;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline std::optional<double> alignment_rate(const QTable& q, const UserOracle& oracle,
                                            const std::set<std::size_t>& visited) {
  const auto* scripted = std::get_if<ScriptedOracle>(&oracle);
  if (scripted == nullptr) {
    return std::nullopt;
  }
  std::size_t considered = 0;
  std::size_t aligned = 0;
  for (const auto index : visited) {
    const auto& pref = scripted->preference(index);
    if (!pref) {
      continue;
    }
    ++considered;
    aligned += q.vocabulary().actions()[greedy_index(q.row(index))] == *pref ? 1 : 0;
  }
  if (considered == 0) {
    return std::nullopt;
  }
  return static_cast<double>(aligned) / static_cast<double>(considered);
}

inline std::optional<int> convergence_episode(const std::vector<std::optional<double>>& rates) {
  std::optional<int> first;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] && *rates[i] == 1.0) {
      if (!first) {
        first = static_cast<int>(i);
      }
    } else {
      first.reset();
    }
  }
  return first;
}

// Rebuilds the per-episode Q-tables from the traces' recorded cell values and
// derives the report from them.
inline TrainingReport compute_metrics(const std::vector<EpisodeTrace>& traces, const Scenario& scenario) {
  if (traces.empty()) {
    throw RuntimeError("compute_metrics needs at least one episode trace");
  }
  TrainingReport report;
  report.scenario = scenario.name;
  QTable q(scenario.space, scenario.vocabulary);
  for (const auto t : scenario.terminal_states) {
    q.mark_terminal(t);
  }
  double epsilon = scenario.params.epsilon0;
  for (const auto& trace : traces) {
    std::set<std::size_t> visited;
    for (const auto& step : trace.steps) {
      visited.insert(encode_state(scenario.space, step.state()));
      for (const auto& u : step.updates) {
        q.set(u.state_index, u.action_index, u.after);
      }
    }
    report.cumulative_reward.push_back(trace.cumulative_reward());
    report.alignment_rate.push_back(alignment_rate(q, scenario.oracle, visited));
    epsilon = update_epsilon(trace.epsilon, scenario.params);
  }
  report.convergence_episode = convergence_episode(report.alignment_rate);
  report.final_epsilon = epsilon;
  return report;
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

enum class EventKind {
  StateChanged,
  DecisionMade,
  FeedbackRequested,
  FeedbackResolved,
  QUpdated,
  EpisodeCompleted,
  RunCompleted,
};

inline const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::StateChanged:
      return "state_changed";
    case EventKind::DecisionMade:
      return "decision_made";
    case EventKind::FeedbackRequested:
      return "feedback_requested";
    case EventKind::FeedbackResolved:
      return "feedback_resolved";
    case EventKind::QUpdated:
      return "q_updated";
    case EventKind::EpisodeCompleted:
      return "episode_completed";
    case EventKind::RunCompleted:
      return "run_completed";
  }
  return "?";
}

using EventSink = std::function<void(EventKind, json payload)>;

inline json to_json(const QUpdate& u, const QTable& q) {
  return {{"state", to_json(decode_state(q.space(), u.state_index))},
          {"action", q.vocabulary().actions()[u.action_index].name()},
          {"reward", u.reward},
          {"state_index", u.state_index},
          {"action_index", u.action_index},
          {"next_state", to_json(u.next_state)},
          {"next_index", u.next_index},
          {"max_next", u.max_next},
          {"before", u.before},
          {"after", u.after}};
}

inline json to_json(const TrainingReport& r) {
  json rates = json::array();
  for (const auto& rate : r.alignment_rate) {
    rates.push_back(rate ? json(*rate) : json(nullptr));
  }
  return {{"scenario", r.scenario},
          {"episodes", r.cumulative_reward.size()},
          {"cumulative_reward", r.cumulative_reward},
          {"alignment_rate", rates},
          {"convergence_episode", r.convergence_episode ? json(*r.convergence_episode) : json(nullptr)},
          {"final_epsilon", r.final_epsilon}};
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

class Engine {
 public:
  explicit Engine(std::shared_ptr<const Scenario> scenario, std::shared_ptr<FeedbackChannel> channel = nullptr,
                  EventSink sink = {})
      : scenario_(std::move(scenario)),
        oracle_(scenario_->oracle),
        q_(scenario_->space, scenario_->vocabulary),
        rng_(scenario_->seed),
        sink_(std::move(sink)),
        epsilon_(scenario_->params.epsilon0),
        state_(scenario_->initial_state) {
    if (auto* collab = std::get_if<CollaborativeOracle>(&oracle_)) {
      if (!channel) {
        throw ValidationError("scenario '" + scenario_->name +
                              "' uses a collaborative oracle and needs a feedback channel (use `serve`)");
      }
      collab->channel = std::move(channel);
    }
    for (const auto t : scenario_->terminal_states) {
      q_.mark_terminal(t);
    }
    current_.episode = 0;
    current_.epsilon = epsilon_;
  }

  const Scenario& scenario() const { return *scenario_; }
  const QTable& qtable() const { return q_; }
  const JointState& state() const { return state_; }
  double epsilon() const { return epsilon_; }
  int episode() const { return episode_; }
  int step_index() const { return static_cast<int>(current_.steps.size()); }
  bool finished() const { return episode_ >= scenario_->episodes; }
  const std::vector<EpisodeTrace>& traces() const { return traces_; }

  TrainingReport report() const { return compute_metrics(traces_, *scenario_); }

  StepRecord step() {
    if (finished()) {
      throw RuntimeError("run already completed");
    }
    const auto& sc = *scenario_;
    StepRecord rec;
    rec.step = step_index();
    try {
      const auto plan = plan_for(sc.space, state_, sc.rules);
      rec.decision = decide(epsilon_, rng_, plan, oracle_, state_, q_, [&](DecisionSource source, double draw) {
        emit(EventKind::DecisionMade, {{"episode", episode_},
                                       {"step", rec.step},
                                       {"state", to_json(state_)},
                                       {"plan_action", plan.action.name()},
                                       {"source", to_string(source)},
                                       {"draw", draw},
                                       {"epsilon", epsilon_}});
      });
      for (const auto& ev : reward(rec.decision, sc.params)) {
        auto update = q_update(q_, ev, sc.params);
        auto payload = to_json(update, q_);
        payload["episode"] = episode_;
        payload["step"] = rec.step;
        emit(EventKind::QUpdated, std::move(payload));
        rec.updates.push_back(std::move(update));
      }
      rec.next_state = apply_action(sc.space, state_, rec.executed_action());
    } catch (const std::exception& e) {
      throw RuntimeError("episode " + std::to_string(episode_) + " step " + std::to_string(rec.step) + ": " +
                         e.what());
    }
    emit(EventKind::StateChanged, {{"episode", episode_},
                                   {"step", rec.step},
                                   {"previous_state", to_json(state_)},
                                   {"action", rec.executed_action().name()},
                                   {"source", to_string(rec.decision.source)},
                                   {"fell_back", rec.decision.fell_back},
                                   {"state", to_json(rec.next_state)}});
    state_ = rec.next_state;
    current_.steps.push_back(rec);
    if (step_index() >= sc.steps_per_episode || q_.is_terminal(encode_state(sc.space, state_))) {
      finish_episode();
    }
    return rec;
  }

  // Runs the remainder of the current episode and returns its trace.
  EpisodeTrace run_episode() {
    const int target = episode_;
    while (!finished() && episode_ == target) {
      step();
    }
    return traces_.at(static_cast<std::size_t>(target));
  }

  void run_to_end() {
    while (!finished()) {
      step();
    }
  }

 private:
  void emit(EventKind kind, json payload) {
    if (sink_) {
      sink_(kind, std::move(payload));
    }
  }

  void finish_episode() {
    const auto& sc = *scenario_;
    std::set<std::size_t> visited;
    for (const auto& s : current_.steps) {
      visited.insert(encode_state(sc.space, s.state()));
    }
    const auto rate = alignment_rate(q_, oracle_, visited);
    emit(EventKind::EpisodeCompleted, {{"episode", episode_},
                                       {"epsilon", current_.epsilon},
                                       {"steps", current_.steps.size()},
                                       {"cumulative_reward", current_.cumulative_reward()},
                                       {"alignment_rate", rate ? json(*rate) : json(nullptr)}});
    traces_.push_back(std::move(current_));
    epsilon_ = update_epsilon(epsilon_, sc.params);
    ++episode_;
    current_ = EpisodeTrace{episode_, epsilon_, {}};
    if (finished()) {
      emit(EventKind::RunCompleted, {{"report", to_json(report())}});
      return;
    }
    const auto previous = state_;
    state_ = sc.initial_state;
    emit(EventKind::StateChanged, {{"episode", episode_},
                                   {"step", 0},
                                   {"previous_state", to_json(previous)},
                                   {"action", nullptr},
                                   {"reset", true},
                                   {"state", to_json(state_)}});
  }

  std::shared_ptr<const Scenario> scenario_;
  UserOracle oracle_;
  QTable q_;
  Rng rng_;
  EventSink sink_;
  double epsilon_;
  int episode_ = 0;
  JointState state_;
  EpisodeTrace current_;
  std::vector<EpisodeTrace> traces_;
};

inline TrainingResult run_training(std::shared_ptr<const Scenario> scenario) {
  Engine engine(std::move(scenario));
  engine.run_to_end();
  return {engine.report(), engine.qtable(), engine.traces()};
}

inline TrainingResult run_training(const Scenario& scenario) {
  return run_training(std::make_shared<const Scenario>(scenario));
}

}  // namespace qsmash
